use std::sync::OnceLock;

use uax_core::dataset::{generate_synthetic, IdentityDataset, ImageTensor, SynthParams};
use uax_core::extractor::{
    init_model, train_classifier, Arch, Embedder, ExtractorModel, ExtractorSpec, InputShape, TrainConfig, TrainReport,
};
use uax_core::metrics::{distance, Metric};

fn fifty_identities() -> &'static IdentityDataset {
    static DATA: OnceLock<IdentityDataset> = OnceLock::new();
    DATA.get_or_init(|| {
        generate_synthetic(&SynthParams {
            identity_count: 50,
            ..SynthParams::default()
        })
        .unwrap()
    })
}

fn trained(arch: Arch) -> &'static (ExtractorModel, TrainReport) {
    static TINY: OnceLock<(ExtractorModel, TrainReport)> = OnceLock::new();
    static MLP: OnceLock<(ExtractorModel, TrainReport)> = OnceLock::new();
    let cell = match arch {
        Arch::TinyCnn => &TINY,
        Arch::Mlp => &MLP,
    };
    cell.get_or_init(|| {
        let data = fifty_identities();
        let spec = ExtractorSpec::for_arch(arch, InputShape::square(112, 1), 64, data.identity_count());
        train_classifier(init_model(spec, 0).unwrap(), data, &TrainConfig::for_arch(arch)).unwrap()
    })
}

#[test]
fn default_training_fits_fifty_identities() {
    let (model, report) = trained(Arch::TinyCnn);
    assert!(report.final_train_accuracy >= 0.9, "accuracy {}", report.final_train_accuracy);
    assert_eq!(model.train_meta().unwrap().final_train_accuracy, report.final_train_accuracy);
    for w in report.epoch_losses[..3].windows(2) {
        assert!(w[1] <= w[0] * 1.01, "epoch losses {:?}", &report.epoch_losses[..3]);
    }
}

#[test]
fn architectures_embed_differently() {
    let images: Vec<&ImageTensor> = fifty_identities().images().step_by(4).map(|(_, img)| img).collect();
    let upper_triangle = |model: &ExtractorModel| {
        let e = model.embed_batch(&images).unwrap();
        let mut out = Vec::new();
        for i in 0..e.len() {
            for j in i + 1..e.len() {
                out.push(distance(&e[i], &e[j], Metric::Euclidean).unwrap());
            }
        }
        out
    };
    let a = upper_triangle(&trained(Arch::TinyCnn).0);
    let b = upper_triangle(&trained(Arch::Mlp).0);
    let similarity = 1.0 - distance(&a, &b, Metric::Cosine).unwrap();
    assert!(similarity < 0.99, "cosine similarity {similarity}");
}

#[test]
fn embedding_is_a_pure_function() {
    let (model, _) = trained(Arch::TinyCnn);
    let img = fifty_identities().images().next().unwrap().1;
    let a = model.embed(img).unwrap();
    let _ = model.embed_batch(&[img, img]).unwrap();
    let b = model.embed(img).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}
