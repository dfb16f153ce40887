mod common;

use std::collections::BTreeSet;

use common::{brute_force_eer, closer_linf_point, intra_inter_pixel_distance};
use proptest::prelude::*;
use rand::SeedableRng;
use uax_core::attack::{craft_uax, project, CraftConfig, Norm, PerturbationBudget, UaxArtifact};
use uax_core::dataset::{generate_synthetic, split_disjoint, SynthParams};
use uax_core::extractor::{init_model, ExtractorModel, ExtractorSpec, InputShape};
use uax_core::metrics::{build_scores, compute_eer, evaluate_uax, Metric, ScoreSet};

fn budget_strategy() -> impl Strategy<Value = PerturbationBudget> {
    (prop_oneof![Just(Norm::LInf), Just(Norm::L2)], 1e-3f64..1.0)
        .prop_map(|(norm, xi)| PerturbationBudget::new(norm, xi).unwrap())
}

/// Scores on a coarse grid so ties between and within sides are common.
fn scores(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0u32..40).prop_map(|k| f64::from(k) / 8.0), 1..max_len)
}

proptest! {
    #[test]
    fn projection_lands_in_the_ball_and_is_idempotent(
        nu in prop::collection::vec(-1.0f64..1.0, 1..64),
        budget in budget_strategy(),
        seed in any::<u64>(),
    ) {
        let p = project(&nu, &budget);
        prop_assert!(budget.norm().of(&p) <= budget.xi());
        let again = project(&p, &budget);
        prop_assert!(p.iter().zip(&again).all(|(a, b)| a.to_bits() == b.to_bits()));
        if budget.norm() == Norm::LInf {
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            prop_assert_eq!(closer_linf_point(&mut rng, &nu, budget.xi(), &p, 300), None);
        }
    }

    #[test]
    fn eer_matches_exhaustive_sweep(genuine in scores(120), imposter in scores(120)) {
        let point = compute_eer(&ScoreSet::new(genuine.clone(), imposter.clone(), Metric::Euclidean).unwrap()).unwrap();
        let (eer, tau) = brute_force_eer(&genuine, &imposter);
        prop_assert_eq!(point.threshold, tau);
        prop_assert!((point.eer - eer).abs() < 1e-15);
    }

    #[test]
    fn rates_are_monotone_in_threshold(genuine in scores(60), imposter in scores(60), a in 0.0f64..5.0, b in 0.0f64..5.0) {
        let set = ScoreSet::new(genuine, imposter, Metric::Euclidean).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(set.fmr(lo) <= set.fmr(hi));
        prop_assert!(set.fnmr(lo) >= set.fnmr(hi));
        for r in [set.fmr(lo), set.fnmr(lo)] {
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn splits_are_identity_disjoint_and_complete(ids in 2usize..12, fraction in 0.15f64..0.85, seed in any::<u64>()) {
        let data = generate_synthetic(&SynthParams {
            identity_count: ids,
            images_per_identity: 2,
            image_size: 12,
            prototype_dim: 12,
            rng_seed: seed,
            ..SynthParams::default()
        }).unwrap();
        let Ok((train, test)) = split_disjoint(&data, fraction, seed) else {
            // only rounding to an empty side may fail
            let k = (fraction * ids as f64).round() as usize;
            prop_assert!(k == 0 || k == ids);
            return Ok(());
        };
        let a: BTreeSet<&str> = train.labels().collect();
        let b: BTreeSet<&str> = test.labels().collect();
        prop_assert!(a.is_disjoint(&b));
        prop_assert_eq!(a.len() + b.len(), ids);
        for set in [&train, &test] {
            for (_, img) in set.images() {
                prop_assert!(img.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
            }
        }
    }
}

#[test]
fn default_generator_separates_identities() {
    let data = generate_synthetic(&SynthParams::default()).unwrap();
    let (intra, inter) = intra_inter_pixel_distance(&data);
    assert!(intra < inter, "intra {intra} vs inter {inter}");
}

fn small_setup() -> (ExtractorModel, uax_core::dataset::IdentityDataset, uax_core::dataset::IdentityDataset) {
    let data = generate_synthetic(&SynthParams {
        identity_count: 9,
        images_per_identity: 3,
        image_size: 16,
        ..SynthParams::default()
    })
    .unwrap();
    let (train, test) = split_disjoint(&data, 2.0 / 3.0, 3).unwrap();
    let model = init_model(ExtractorSpec::tiny_cnn(InputShape::square(16, 1), 8, train.identity_count()), 5).unwrap();
    (model, train, test)
}

#[test]
fn zero_perturbation_matches_baseline_exactly() {
    let (model, train, test) = small_setup();
    let point = compute_eer(&build_scores(&model, &train, 500, 0, Metric::Euclidean).unwrap()).unwrap();
    for (_, seed) in train.images().step_by(4) {
        let artifact = UaxArtifact::unperturbed(seed.clone(), CraftConfig::default());
        let (r_train, r_test) = evaluate_uax(&model, &artifact, &train, &test, Some(&point)).unwrap();
        for r in [&r_train, &r_test] {
            assert_eq!(r.uax_fmr.to_bits(), r.baseline_fmr.to_bits());
            assert_eq!(r.per_identity_match_rate.to_bits(), r.baseline_identity_match_rate.to_bits());
            let hit = r.per_identity.iter().filter(|m| m.matched > 0).count();
            assert_eq!(r.per_identity_match_rate, hit as f64 / r.per_identity.len() as f64);
            let images: usize = r.per_identity.iter().map(|m| m.matched).sum();
            assert_eq!(r.uax_fmr, images as f64 / r.image_count as f64);
        }
    }
}

#[test]
fn crafted_perturbations_respect_budget_and_replay_exactly() {
    let (model, train, _) = small_setup();
    let seed = train.images().next().unwrap().1.clone();
    for (norm, xi) in [(Norm::LInf, 10.0 / 255.0), (Norm::LInf, 0.3), (Norm::L2, 0.5)] {
        let cfg = CraftConfig {
            iterations: 40,
            batch_size: 4,
            learning_rate: 0.5,
            budget: PerturbationBudget::new(norm, xi).unwrap(),
            ..CraftConfig::default()
        };
        let a = craft_uax(&model, &seed, &train, &cfg).unwrap();
        let b = craft_uax(&model, &seed, &train, &cfg).unwrap();
        match norm {
            Norm::LInf => assert!(a.nu().iter().all(|v| v.abs() <= xi)),
            Norm::L2 => assert!(Norm::L2.of(a.nu()) <= xi),
        }
        assert!(a.nu().iter().zip(b.nu()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.adversarial_image().pixels().iter().all(|p| (0.0..=1.0).contains(p)));
    }
}
