//! Integrated-gradients completeness on models with known structure.

use claimscost::attribution::{integrated_gradients, AttributionConfig};
use claimscost::model::CostModel;
use claimscost::network::{Architecture, NetworkParameters, HIDDEN_LAYERS};
use claimscost::trainer::RidgeParameters;
use claimscost::vocab_encoder::SparseFeatureVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sparse(d: usize, density: f64, rng: &mut ChaCha8Rng) -> SparseFeatureVector {
    let dense: Vec<f64> = (0..d)
        .map(|_| if rng.random_bool(density) { rng.random_range(0.5..3.0) } else { 0.0 })
        .collect();
    SparseFeatureVector::from_dense(&dense)
}

fn ig_sum(model: &dyn CostModel, x: &SparseFeatureVector, config: &AttributionConfig) -> f64 {
    integrated_gradients(model, x, config).unwrap().iter().map(|(_, v)| v).sum()
}

fn network(d: usize, seed: u64, bias_scale: f64) -> NetworkParameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParameters::init(Architecture::new(d), seed).unwrap();
    for l in 0..=HIDDEN_LAYERS {
        for b in params.bias_mut(l) {
            *b = bias_scale * rng.random_range(-1.0..1.0);
        }
    }
    for b in params.bias_mut(HIDDEN_LAYERS) {
        *b += 0.5;
    }
    params
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn linear_model_is_exact_with_one_step(d in 1usize..40, seed in any::<u64>(), shifted in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..d * 7).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..7).map(|_| rng.random_range(0.0..5.0)).collect();
        let model = RidgeParameters::from_effective(d, &w, &b, 0.1);
        let x = sparse(d, 0.4, &mut rng);
        let baseline = shifted.then(|| sparse(d, 0.4, &mut rng));
        let config = AttributionConfig { steps: 1, baseline: baseline.clone(), ..AttributionConfig::default() };
        let f0 = model.predict_total(baseline.as_ref().unwrap_or(&SparseFeatureVector::empty(d))).unwrap();
        let delta = model.predict_total(&x).unwrap() - f0;
        prop_assert!((ig_sum(&model, &x, &config) - delta).abs() <= 1e-9 * delta.abs().max(1.0));
    }

    /// With zero biases the network is positively homogeneous along the ray
    /// from the origin, so the gradient is constant on the path and any step
    /// count is exact.
    #[test]
    fn bias_free_network_is_exact_at_any_step_count(d in 2usize..60, seed in any::<u64>(), steps in 1usize..20) {
        let mut params = network(d, seed, 0.0);
        for b in params.bias_mut(HIDDEN_LAYERS) {
            *b = 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x = sparse(d, 0.3, &mut rng);
        let delta = params.predict_total(&x).unwrap() - params.predict_total(&SparseFeatureVector::empty(d)).unwrap();
        let config = AttributionConfig { steps, ..AttributionConfig::default() };
        prop_assert!((ig_sum(&params, &x, &config) - delta).abs() <= 1e-9 * delta.abs().max(1.0));
    }
}

#[test]
fn completeness_gap_shrinks_with_step_count() {
    for seed in 0..5 {
        let params = network(80, seed, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = sparse(80, 0.1, &mut rng);
        let delta = params.predict_total(&x).unwrap() - params.predict_total(&SparseFeatureVector::empty(80)).unwrap();
        let gap = |steps| {
            let config = AttributionConfig { steps, ..AttributionConfig::default() };
            (ig_sum(&params, &x, &config) - delta).abs()
        };
        let (coarse, fine) = (gap(30), gap(30_000));
        assert!(fine <= 1e-3 * delta.abs().max(1.0), "seed {seed}: gap {fine} at 30000 steps");
        assert!(fine <= coarse + 1e-12, "seed {seed}: {fine} > {coarse}");
    }
}

#[test]
fn attributions_cover_only_changed_columns() {
    let params = network(30, 4, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = sparse(30, 0.2, &mut rng);
    let ig = integrated_gradients(&params, &x, &AttributionConfig::default()).unwrap();
    let columns: Vec<usize> = ig.iter().map(|(i, _)| *i).collect();
    assert_eq!(columns, x.indices());
    let at_baseline = AttributionConfig {
        baseline: Some(x.clone()),
        ..AttributionConfig::default()
    };
    assert!(integrated_gradients(&params, &x, &at_baseline).unwrap().is_empty());
}
