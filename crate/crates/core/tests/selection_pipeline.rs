//! Importance weights, their fine-tuned estimates and the estimation-error
//! split on the standard fixture.

use adaptlab_core::analysis::median;
use adaptlab_core::fixture;
use adaptlab_core::model::{empirical_loss, expected_loss, log_prob};
use adaptlab_core::selection::{
    binarize_intsel, effective_sample_size, estimated_importance_weights,
    estimation_error_report, true_importance_weights, EstimationSetup,
};
use adaptlab_core::sources::{enumerate_distribution, sample};
use adaptlab_core::training::{fine_tune, train};
use adaptlab_core::{ModelParams, SelectionWeights, TrainConfig, WeightMethod};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn weighted_generic_loss_estimates_target_loss() {
    let f = fixture::standard().unwrap();
    let table_t = enumerate_distribution(&f.target).unwrap();
    let table_d = enumerate_distribution(&f.generic).unwrap();
    let d = sample(&f.generic, 200_000, 5).unwrap();
    let w = true_importance_weights(&table_t, &table_d, &d).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let theta: Vec<f64> = (0..f.arch.param_count())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let params = ModelParams::new(f.arch, theta).unwrap();
    let weighted = empirical_loss(&params, &d, Some(&w)).unwrap();
    let exact = expected_loss(&params, &table_t).unwrap();
    // standard error of the weighted mean, from the sample itself
    let terms: Vec<f64> = d
        .iter()
        .zip(w.values())
        .map(|(y, wi)| -wi * log_prob(&params, y).unwrap())
        .collect();
    let mean = terms.iter().sum::<f64>() / terms.len() as f64;
    let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (terms.len() - 1) as f64;
    let se = (var / terms.len() as f64).sqrt();
    assert!((weighted - exact).abs() < 4.0 * se, "{weighted} vs {exact} (se {se})");

    let ess = effective_sample_size(&w).unwrap();
    assert!(ess.n_e < d.len() as f64);
}

#[test]
fn fine_tuned_weights_concentrate_on_target_like_sequences() {
    let f = fixture::standard().unwrap();
    let table_t = enumerate_distribution(&f.target).unwrap();
    let table_d = enumerate_distribution(&f.generic).unwrap();
    let d = sample(&f.generic, f.size_d, 1).unwrap();
    let t = sample(&f.target, f.size_t, 2).unwrap();
    let truth = true_importance_weights(&table_t, &table_d, &d).unwrap();
    let near: Vec<bool> = truth.values().iter().map(|w| *w > 1.0).collect();
    let (theta_d, _) = train(&ModelParams::zeros(f.arch), &d, &f.train, None).unwrap();

    let share = |n_ft: usize| {
        let (theta_t, _) = fine_tune(&theta_d, &t, n_ft, 0.5).unwrap();
        let w = estimated_importance_weights(&theta_t, &theta_d, &d).unwrap();
        let total: f64 = w.values().iter().sum();
        let inside: f64 = w
            .values()
            .iter()
            .zip(&near)
            .filter(|(_, n)| **n)
            .map(|(w, _)| w)
            .sum();
        inside / total
    };
    let shares: Vec<f64> = [1, 10, 100].into_iter().map(share).collect();
    assert!(shares.windows(2).all(|s| s[1] >= s[0]), "{shares:?}");

    let (theta_t, _) = fine_tune(&theta_d, &t, 0, 0.5).unwrap();
    let unit = estimated_importance_weights(&theta_t, &theta_d, &d).unwrap();
    assert!(unit.values().iter().all(|w| *w == 1.0));
}

#[test]
fn contrastive_selection_keeps_target_like_sequences() {
    let f = fixture::standard().unwrap();
    let table_t = enumerate_distribution(&f.target).unwrap();
    let table_d = enumerate_distribution(&f.generic).unwrap();
    let d = sample(&f.generic, f.size_d, 1).unwrap();
    let t = sample(&f.target, f.size_t, 2).unwrap();
    let truth = true_importance_weights(&table_t, &table_d, &d).unwrap();
    let (theta_d, _) = train(&ModelParams::zeros(f.arch), &d, &f.train, None).unwrap();
    let (theta_t, _) = fine_tune(&theta_d, &t, 20, 0.5).unwrap();
    let est = estimated_importance_weights(&theta_t, &theta_d, &d).unwrap();
    let kept = binarize_intsel(&est, 0.0);
    let mean_truth = |mask: &SelectionWeights, keep: f64| {
        let picked: Vec<f64> = truth
            .values()
            .iter()
            .zip(mask.values())
            .filter(|(_, m)| **m == keep)
            .map(|(w, _)| *w)
            .collect();
        picked.iter().sum::<f64>() / picked.len() as f64
    };
    assert_eq!(kept.method(), WeightMethod::IntselBinary);
    assert!(mean_truth(&kept, 1.0) > mean_truth(&kept, 0.0));
}

#[test]
fn true_weight_estimation_error_does_not_grow_with_data() {
    let f = fixture::standard().unwrap();
    let table_t = enumerate_distribution(&f.target).unwrap();
    let table_d = enumerate_distribution(&f.generic).unwrap();
    let setup = EstimationSetup {
        train: f.train,
        n_ft: 10,
        ft_learning_rate: 0.5,
        tolerance: 1e-3,
    };
    let medians: Vec<f64> = [100, 1_000, 10_000]
        .into_iter()
        .map(|size| {
            let runs: Vec<f64> = (0..10)
                .map(|s| {
                    let d = sample(&f.generic, size, 40 + s).unwrap();
                    let t = sample(&f.target, f.size_t, 80 + s).unwrap();
                    estimation_error_report(&table_t, &table_d, f.arch, &d, &t, setup)
                        .unwrap()
                        .est_w
                })
                .collect();
            median(&runs).unwrap()
        })
        .collect();
    assert!(medians.windows(2).all(|m| m[1] <= m[0]), "{medians:?}");
}

#[test]
fn in_domain_weights_reproduce_plain_training() {
    let f = fixture::standard().unwrap();
    let table = enumerate_distribution(&f.generic).unwrap();
    let d = sample(&f.generic, 2_000, 9).unwrap();
    let w = true_importance_weights(&table, &table, &d).unwrap();
    let cfg = TrainConfig::full_batch(f.train.learning_rate, 100);
    let (a, _) = train(&ModelParams::zeros(f.arch), &d, &cfg, Some(&w)).unwrap();
    let (b, _) = train(&ModelParams::zeros(f.arch), &d, &cfg, None).unwrap();
    assert_eq!(a, b);
}
