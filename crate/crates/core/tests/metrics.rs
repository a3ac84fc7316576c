mod common;

use accomp_core::codec::{CodecConfig, CodecModel};
use accomp_core::metrics::*;
use accomp_core::synthdata::{generate_trackset, DatasetSpec, Role};
use accomp_core::Error;
use common::metric_oracles::{density_coverage_enumerated, mmd2_double_sum, random_set};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn mmd2_matches_double_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in 3..=32 {
        let a = random_set(&mut rng, n, 8);
        // Offset sets keep MMD² well away from zero, so the relative
        // comparison is not dominated by cancellation between the three terms.
        let b: Vec<Vec<f64>> = random_set(&mut rng, 35 - n, 8)
            .iter()
            .map(|r| r.iter().map(|v| v + 0.5).collect())
            .collect();
        let (got, want) = (mmd2(&a, &b).unwrap(), mmd2_double_sum(&a, &b));
        assert!(
            (got - want).abs() <= 1e-12 * want.abs().max(1e-300),
            "n={n}: {got} vs {want}"
        );
    }
}

#[test]
fn mmd2_identity_and_iid_halves() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_set(&mut rng, 40, 16);
    assert!(mmd2(&x, &x).unwrap() <= 1e-12);
    let big = random_set(&mut rng, 800, 16);
    let (h1, h2) = big.split_at(400);
    assert!(mmd2(h1, h2).unwrap().abs() < 5e-3);
    let shifted: Vec<Vec<f64>> = h2.iter().map(|r| r.iter().map(|v| v + 0.5).collect()).collect();
    assert!(mmd2(h1, &shifted).unwrap() > 0.05);
}

#[test]
fn mmd2_rejects_tiny_sets() {
    let x = vec![vec![0.0; 4]];
    assert!(matches!(
        mmd2(&x, &[vec![0.0; 4], vec![1.0; 4]]),
        Err(Error::TooFew { .. })
    ));
}

#[test]
fn gaussian_kernel_variant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random_set(&mut rng, 30, 4);
    let b: Vec<Vec<f64>> = random_set(&mut rng, 30, 4)
        .iter()
        .map(|r| r.iter().map(|v| v + 1.0).collect())
        .collect();
    let k = Kernel::Gaussian { bandwidth: 1.0 };
    assert!(mmd2_with(&a, &b, k).unwrap() > 0.1);
    assert_eq!(mmd2_with(&a, &b, k).unwrap(), mmd2_with(&b, &a, k).unwrap());
}

proptest! {
    #[test]
    fn mmd2_is_bitwise_symmetric(seed in 0u64..1000, m in 2usize..20, n in 2usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_set(&mut rng, m, 6);
        let b = random_set(&mut rng, n, 6);
        prop_assert_eq!(mmd2(&a, &b).unwrap().to_bits(), mmd2(&b, &a).unwrap().to_bits());
    }

    #[test]
    fn density_coverage_match_enumeration(seed in 0u64..1000, n in 6usize..=32, g in 1usize..=32, k in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let real = random_set(&mut rng, n, 3);
        let gen = random_set(&mut rng, g, 3);
        prop_assert_eq!(density_coverage(&real, &gen, k).unwrap(), density_coverage_enumerated(&real, &gen, k));
    }

    #[test]
    fn frechet_is_nonnegative(seed in 0u64..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_set(&mut rng, 12, 4);
        let b = random_set(&mut rng, 9, 4);
        prop_assert!(frechet(&a, &b).unwrap() > -1e-9);
    }
}

#[test]
fn frechet_closed_forms() {
    let mu = DVector::from_vec(vec![0.5, -1.0, 2.0]);
    let eye = DMatrix::<f64>::identity(3, 3);
    let d = frechet_gaussians(&DVector::zeros(3), &eye, &mu, &eye).unwrap();
    assert!((d - mu.dot(&mu)).abs() < 1e-6);

    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
    let d = frechet_gaussians(&DVector::zeros(2), &a, &DVector::zeros(2), &DMatrix::identity(2, 2)).unwrap();
    assert!((d - 1.0).abs() < 1e-6, "{d}");
}

#[test]
fn frechet_of_a_set_with_itself_vanishes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (n, dim) in [(10, 3), (100, 16), (50, 64)] {
        let x = random_set(&mut rng, n, dim);
        assert!(frechet(&x, &x).unwrap().abs() < 1e-8);
    }
}

#[test]
fn frechet_rejects_indefinite_covariance() {
    let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    let eye = DMatrix::identity(2, 2);
    assert!(matches!(
        frechet_gaussians(&DVector::zeros(2), &bad, &DVector::zeros(2), &eye),
        Err(Error::Numerical(_))
    ));
}

#[test]
fn density_coverage_hand_configuration() {
    let real = vec![
        vec![0.0, 0.0],
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![1.0, 1.0],
        vec![5.0, 5.0],
    ];
    let gen = vec![vec![0.5, 0.0], vec![10.0, 10.0], vec![3.0, 3.0]];
    assert_eq!(density_coverage(&real, &gen, 1).unwrap(), (1.0, 0.6));
    assert_eq!(density_coverage(&real, &real, 1).unwrap().1, 1.0);
    let far = vec![vec![100.0, 100.0]];
    assert_eq!(density_coverage(&real, &far, 2).unwrap(), (0.0, 0.0));
    assert!(density_coverage(&real, &gen, 5).is_err());
    assert!(density_coverage(&vec![vec![1.0, 1.0]; 4], &gen, 1).is_err());
}

#[test]
fn clap_score_boundaries() {
    let a = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    assert!((clap_score(&a, &a).unwrap() - 1.0).abs() < 1e-15);
    let b = vec![vec![0.0, 1.0], vec![-1.0, 0.0]];
    assert_eq!(clap_score(&a, &b).unwrap(), 0.0);
    assert!(matches!(clap_score(&a, &b[..1]), Err(Error::CountMismatch(2, 1))));
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let mut v = v;
    normalize(&mut v);
    v
}

fn paired(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let ctx = random_set(rng, n, 8);
    let noise = random_set(rng, n, 8);
    let acc = ctx
        .iter()
        .zip(&noise)
        .map(|(c, e)| unit(c.iter().zip(e).map(|(x, y)| x + 0.2 * y).collect()))
        .collect();
    (ctx.into_iter().map(unit).collect(), acc)
}

#[test]
fn adherence_orders_true_over_shuffled() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (rc, ra) = paired(&mut rng, 400);
    let (c, a) = paired(&mut rng, 400);
    let real = adherence(&c, &a, &rc, &ra).unwrap();
    let mut shuffled = a.clone();
    shuffled.rotate_left(7);
    let shuf = adherence(&c, &shuffled, &rc, &ra).unwrap();
    assert!(real > 0.8 && shuf < 0.2, "real {real} shuffled {shuf}");
    assert_eq!(adherence_from_distances(2.0, 2.0), 0.0);
    assert!(adherence(&c[..1], &a[..1], &rc, &ra).is_err());
}

#[test]
fn evaluate_batches_and_half_widths() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let reference: Vec<Vec<f64>> = random_set(&mut rng, 60, 4).into_iter().map(unit).collect();
    let batch: Vec<Vec<f64>> = random_set(&mut rng, 10, 4).into_iter().map(unit).collect();
    let candidates: Vec<Vec<f64>> = (0..5).flat_map(|_| batch.clone()).collect();
    let inputs = EvalInputs {
        reference: &reference,
        candidates: &candidates,
        contexts: None,
        descriptors: Some(&candidates),
        real_pairs: None,
        batch_size: 10,
    };
    let report = evaluate(&inputs).unwrap();
    assert_eq!(report.batch_count, 5);
    for (name, m) in &report.metrics {
        assert_eq!(m.batches.len(), 5);
        assert_eq!(m.ci95, 0.0, "{name}");
        assert_eq!(m.value, m.batches.iter().sum::<f64>() / 5.0);
    }
    assert!((report.get("clap_score").unwrap() - 1.0).abs() < 1e-12);
    assert!(report.to_json().contains("\"ci95\""));
    let short = EvalInputs {
        candidates: &candidates[..40],
        ..inputs
    };
    assert!(matches!(evaluate(&short), Err(Error::TooFew { .. })));
}

#[test]
fn embedder_is_frozen_unit_norm_and_role_aligned() {
    let codec = CodecModel::<f32>::new(CodecConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
    let e = Embedder::new(7, &codec).unwrap();
    let e2 = Embedder::new(7, &codec).unwrap();
    let spec = DatasetSpec {
        n_tracksets: 200,
        track_len: 10.0,
        ..DatasetSpec::default()
    };
    let (mut matched, mut mismatched, mut pairs) = (0.0, 0.0, 0usize);
    for i in 0..200 {
        let set = generate_trackset::<f32>(&spec, i).unwrap();
        for t in &set.tracks {
            if pairs == 500 {
                break;
            }
            let z = codec.encode(&t.signal).unwrap();
            let v = e.embed_latent(&z);
            assert_eq!(v, e2.embed_latent(&z));
            assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
            let other = Role::ALL[(t.role.index() + 1 + pairs % 5) % 6];
            matched += cosine(&e.embed_descriptor(t.role), &v).unwrap();
            mismatched += cosine(&e.embed_descriptor(other), &v).unwrap();
            pairs += 1;
        }
    }
    assert_eq!(pairs, 500);
    println!("matched {} mismatched {}", matched / 500.0, mismatched / 500.0);
    assert!(
        matched > mismatched,
        "matched {} mismatched {}",
        matched / 500.0,
        mismatched / 500.0
    );
}
