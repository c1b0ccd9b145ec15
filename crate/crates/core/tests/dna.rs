mod common;

use common::{random_batch, random_lenet, random_small_net, random_states};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stressnet::dna::{
    apply_environment, build_clusters, encode_dna, mask_only, materialize, sample_offspring,
    EnvironmentalFactor, CALIBRATION_TOLERANCE,
};
use stressnet::nn::forward;

const FACTORS: [f64; 6] = [0.95, 0.9, 0.8, 0.6, 0.4, 0.2];

fn ratio(probs: &[f64]) -> f64 {
    let present = probs.iter().filter(|&&p| p > 0.0).count();
    probs.iter().sum::<f64>() / present as f64
}

#[test]
fn lenet_calibration_hits_every_factor() {
    let (arch, params) = random_lenet(&mut ChaCha8Rng::seed_from_u64(11));
    let clusters = build_clusters(&arch);
    let model = encode_dna(&params, &clusters, 0).unwrap();
    for f in FACTORS {
        let env =
            apply_environment(&model, EnvironmentalFactor::new(f).unwrap(), &clusters).unwrap();
        for (li, (layer, c)) in env.layers.iter().zip(&clusters.layers).enumerate() {
            let r = ratio(&layer.synapse);
            assert!(
                (r - f).abs() <= CALIBRATION_TOLERANCE,
                "F={f} layer {li}: {r}"
            );
            assert!(layer.synapse.iter().all(|p| (0.0..=1.0).contains(p)));
            if !c.output_layer {
                let r = ratio(&layer.cluster);
                assert!(
                    (r - f).abs() <= CALIBRATION_TOLERANCE,
                    "F={f} layer {li} clusters: {r}"
                );
            } else {
                assert!(layer.cluster.iter().all(|&p| p == 1.0));
            }
        }
    }
}

#[test]
fn unit_factor_saturates_every_present_synapse() {
    let (arch, params) = random_lenet(&mut ChaCha8Rng::seed_from_u64(12));
    let clusters = build_clusters(&arch);
    let model = encode_dna(&params, &clusters, 0).unwrap();
    let env = apply_environment(&model, EnvironmentalFactor::new(1.0).unwrap(), &clusters).unwrap();
    for layer in &env.layers {
        let low: Vec<f64> = layer
            .synapse
            .iter()
            .chain(&layer.cluster)
            .copied()
            .filter(|&p| p != 1.0)
            .take(5)
            .collect();
        assert!(low.is_empty(), "{low:?}");
    }
    let states = sample_offspring(&env, &clusters, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let (child, _) = materialize(&states, &arch, &params).unwrap();
    assert_eq!(child, arch);
}

#[test]
fn lenet_materialization_matches_masked_parent() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (arch, params) = random_lenet(&mut rng);
    let (batch, _) = random_batch(&arch, 8, &mut rng);
    let batch = batch.cast::<f32>();
    for _ in 0..5 {
        let states = random_states(&params, &mut rng);
        let masked = mask_only(&states, &params);
        let (child_arch, child) = materialize(&states, &arch, &params).unwrap();
        assert!(child_arch.total_synapses() < arch.total_synapses());
        let a = forward(&arch, &masked, &batch).unwrap();
        let b = forward(&child_arch, &child, &batch).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!(
                (x - y).abs() <= 1e-5 * x.abs().max(y.abs()).max(1.0),
                "{x} vs {y}"
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn calibration_contract(seed in any::<u64>(), fi in 0usize..6) {
        let f = FACTORS[fi];
        let net = random_small_net(&mut ChaCha8Rng::seed_from_u64(seed));
        let clusters = build_clusters(&net.arch);
        let model = encode_dna(&net.params, &clusters, 0).unwrap();
        let env = apply_environment(&model, EnvironmentalFactor::new(f).unwrap(), &clusters).unwrap();
        for (layer, c) in env.layers.iter().zip(&clusters.layers) {
            prop_assert!((ratio(&layer.synapse) - f).abs() <= CALIBRATION_TOLERANCE);
            if !c.output_layer {
                prop_assert!((ratio(&layer.cluster) - f).abs() <= CALIBRATION_TOLERANCE);
            }
        }
        prop_assert!(env.expected_joint(&clusters) <= model.present_synapses() as f64 * f + 1e-6);
    }

    #[test]
    fn offspring_never_grow(seed in any::<u64>(), fi in 0usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_small_net(&mut rng);
        let clusters = build_clusters(&net.arch);
        let model = encode_dna(&net.params, &clusters, 0).unwrap();
        let env = apply_environment(&model, EnvironmentalFactor::new(FACTORS[fi]).unwrap(), &clusters).unwrap();
        let states = sample_offspring(&env, &clusters, &mut rng).unwrap();
        prop_assert!(states.count() <= net.params.nonzero_count());
        if let Ok((arch, params)) = materialize(&states, &net.arch, &net.params) {
            prop_assert!(arch.total_synapses() <= net.arch.total_synapses());
            prop_assert!(params.nonzero_count() <= net.params.nonzero_count());
            for (spec, parent) in arch.layers.iter().zip(&net.arch.layers) {
                prop_assert!(spec.units().unwrap_or(0) <= parent.units().unwrap_or(0));
            }
        }
    }

    #[test]
    fn sampling_is_seeded(seed in any::<u64>(), draw in any::<u64>()) {
        let net = random_small_net(&mut ChaCha8Rng::seed_from_u64(seed));
        let clusters = build_clusters(&net.arch);
        let model = encode_dna(&net.params, &clusters, 0).unwrap();
        let env = apply_environment(&model, EnvironmentalFactor::new(0.6).unwrap(), &clusters).unwrap();
        let a = sample_offspring(&env, &clusters, &mut ChaCha8Rng::seed_from_u64(draw)).unwrap();
        let b = sample_offspring(&env, &clusters, &mut ChaCha8Rng::seed_from_u64(draw)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn materialized_forward_matches_mask(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_small_net(&mut rng);
        let states = random_states(&net.params.cast(), &mut rng);
        let (batch, _) = random_batch(&net.arch, 4, &mut rng);
        let masked = mask_only(&states, &net.params);
        if let Ok((arch, params)) = materialize(&states, &net.arch, &net.params) {
            let a = forward(&net.arch, &masked, &batch).unwrap();
            let b = forward(&arch, &params, &batch).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0), "{} vs {}", x, y);
            }
        }
    }
}
