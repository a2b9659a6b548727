use koppa_core::metrics::{wasserstein2, AccuracyMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0) + shift).collect())
        .collect()
}

#[test]
fn wasserstein_is_a_metric_on_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let a = cloud(&mut rng, 12, 0.0);
        let b = cloud(&mut rng, 12, 0.5);
        let c = cloud(&mut rng, 12, -0.3);
        let ab = wasserstein2(&a, &b).unwrap();
        let ba = wasserstein2(&b, &a).unwrap();
        let bc = wasserstein2(&b, &c).unwrap();
        let ac = wasserstein2(&a, &c).unwrap();
        assert!((ab - ba).abs() < 1e-9);
        assert!(wasserstein2(&a, &a).unwrap() < 1e-9);
        assert!(ac <= ab + bc + 1e-9);
    }
}

/// Straight transcription of the two definitions, used as an independent
/// reference.
fn reference(stages: &[Vec<f64>]) -> (f64, f64) {
    let n = stages.len();
    let a = stages[n - 1].iter().sum::<f64>() / n as f64;
    let mut f = 0.0;
    for t in 0..n - 1 {
        let mut best = f64::NEG_INFINITY;
        for stage in &stages[t..n - 1] {
            best = best.max(stage[t] - stages[n - 1][t]);
        }
        f += best;
    }
    (a, f / (n - 1) as f64)
}

#[test]
fn accuracy_and_forgetting_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in 2..8 {
        let stages: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..=i).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let m = AccuracyMatrix::from_stages(stages.clone()).unwrap();
        let (a, f) = reference(&stages);
        assert!((m.average_accuracy().unwrap() - a).abs() < 1e-12);
        assert!((m.average_forgetting().unwrap() - f).abs() < 1e-12);
    }
}
