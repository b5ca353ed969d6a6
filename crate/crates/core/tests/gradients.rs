use avrn::data::FeatureSequence;
use avrn::gradcheck::{check_variant, finite_diff_check, GradCheckOptions, VariantCheckSetup};
use avrn::model::{evaluate_loss, loss_and_gradients, AvrnParams, ModelConfig, ModelVariant};
use avrn::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check_config(cfg: ModelConfig, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = AvrnParams::init(cfg.clone(), &mut rng).unwrap();
    let n = 8;
    let feats = FeatureSequence::new(
        "g",
        Matrix::uniform(n, cfg.visual_dim, 1, &mut rng),
        Matrix::uniform(n, cfg.audio_dim, 1, &mut rng),
    )
    .unwrap();
    let target: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    let (_, grads) = loss_and_gradients(&params, &feats, &target).unwrap();
    let report = finite_diff_check(
        |p: &AvrnParams| evaluate_loss(p, &feats, &target),
        &mut params,
        &grads,
        &GradCheckOptions::default(),
        &mut rng,
    )
    .unwrap();
    assert!(report.passed(), "worst {:.2e}", report.max_relative_error());
    report.max_relative_error()
}

#[test]
fn elementwise_gate_and_scaled_attention_gradients() {
    for (elementwise, scaled) in [(true, false), (false, true), (true, true)] {
        for variant in [ModelVariant::Full, ModelVariant::FusionOnly] {
            let mut cfg = ModelConfig::new(variant, 5, 3, 3);
            cfg.elementwise_gate = elementwise;
            cfg.scaled_attention = scaled;
            check_config(cfg, 31);
        }
    }
}

#[test]
fn corrupted_gradients_are_caught_in_every_variant() {
    let setup = VariantCheckSetup {
        corrupt: true,
        ..VariantCheckSetup::default()
    };
    for variant in ModelVariant::ALL {
        let c = check_variant(variant, &setup, &GradCheckOptions::default()).unwrap();
        assert!(!c.passed, "{variant}");
        assert!(c.max_relative_error > 1e-2);
        assert!(!c.groups.is_empty());
    }
}

#[test]
fn unused_groups_get_exactly_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for variant in ModelVariant::ALL {
        let cfg = ModelConfig::new(variant, 5, 3, 3);
        let params = AvrnParams::init(cfg, &mut rng).unwrap();
        let feats = FeatureSequence::new(
            "z",
            Matrix::uniform(6, 5, 1, &mut rng),
            Matrix::uniform(6, 3, 1, &mut rng),
        )
        .unwrap();
        let (_, grads) = loss_and_gradients(&params, &feats, &[0.3; 6]).unwrap();
        let active = variant.active_groups();
        use avrn::gradcheck::{group_of, Parameters};
        for ((name, _), g) in params.tensors().into_iter().zip(&grads) {
            if !active.contains(&group_of(&name)) {
                assert!(g.data().iter().all(|&v| v == 0.0), "{variant} {name}");
            }
        }
    }
}
