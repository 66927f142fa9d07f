use echopipe::explain::{conditional_affinities, grad_cam_from_maps, silhouette, tsne_embed, TsneConfig};
use echopipe::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn blobs(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let c = i % 2;
        x.push((0..8).map(|_| c as f64 * 6.0 + rng.gen_range(-1.0..1.0)).collect());
        y.push(c);
    }
    (x, y)
}

#[test]
fn tsne_is_deterministic_and_separates_blobs() {
    let (x, y) = blobs(3, 40);
    let names: Vec<String> = y.iter().map(|c| c.to_string()).collect();
    let cfg = TsneConfig { perplexity: 10.0, iterations: 500, seed: 5, ..TsneConfig::default() };
    let a = tsne_embed(&x, &names, &cfg).unwrap();
    let b = tsne_embed(&x, &names, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.kl_history.len(), 500);
    let pts: Vec<Vec<f64>> = a.points.iter().map(|p| p.to_vec()).collect();
    let sil = silhouette(&pts, &y).unwrap();
    assert!(sil > 0.5, "{sil}");
    let csv = a.to_csv();
    assert_eq!(csv.lines().count(), 41);
}

#[test]
fn tsne_rejects_ragged_input() {
    let x = vec![vec![0.0, 1.0], vec![1.0]];
    assert!(tsne_embed(&x, &["a".into(), "b".into()], &TsneConfig::default()).is_err());
}

#[test]
fn affinity_rows_hit_the_target_perplexity() {
    let (x, _) = blobs(9, 60);
    let (p, beta) = conditional_affinities(&x, 12.0).unwrap();
    assert_eq!(beta.len(), 60);
    for row in &p {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let h: f64 = row.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
        assert!((h - 12f64.ln()).abs() < 1e-4, "{h}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn heatmap_ignores_positive_gradient_scale(seed in any::<u64>(), s in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, h, w) = (3, 4, 5);
        let a: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(0.0..2.0)).collect();
        let g: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let act = Tensor::from_vec(&[1, c, h, w], a).unwrap();
        let base = grad_cam_from_maps(&act, &Tensor::from_vec(&[1, c, h, w], g.clone()).unwrap(), 20).unwrap();
        let scaled = grad_cam_from_maps(&act, &Tensor::from_vec(&[1, c, h, w], g.iter().map(|v| v * s).collect()).unwrap(), 20).unwrap();
        prop_assert_eq!(base.len(), 400);
        prop_assert!(base.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
        for (x, y) in base.iter().zip(&scaled) {
            prop_assert!((x - y).abs() < 1e-5);
        }
    }
}

#[test]
fn heatmap_needs_a_spatial_layer() {
    let a = Tensor::<f64>::from_vec(&[1, 4], vec![1.0; 4]).unwrap();
    assert!(grad_cam_from_maps(&a, &a, 8).is_err());
}
