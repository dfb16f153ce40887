use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use super::{
    CliError, Cli, Command, CraftArgs, EvalArgs, GenDataArgs, IngestArgs, RunConfig, RunDir, TrainArgs, TransferArgs,
};
use crate::attack::{craft_uax, load_artifact, save_artifact, PerturbationBudget, UaxArtifact};
use crate::dataset::{
    generate_synthetic, load_directory, load_png, preprocess_to, save_directory, split_disjoint, Channels, DatasetRole,
    IdentityDataset,
};
use crate::extractor::{
    init_model, load_model, save_model, train_classifier, Embedder, ExtractorModel, ExtractorSpec, InputShape,
};
use crate::metrics::{
    build_scores, compute_eer, evaluate_with_galleries, histogram, summarize, transfer_matrix, EerPoint,
    GalleryEmbeddings,
};

const MODEL_FILE: &str = "model.uaxm";

pub(super) fn dispatch(cli: Cli, args: Vec<String>) -> Result<(), CliError> {
    let mut cfg = RunConfig::load_or_default(cli.config.as_deref())?;
    cfg.propagate_seed();
    match cli.command {
        Command::GenData(a) => gen_data(cfg, a, args),
        Command::Ingest(a) => ingest(cfg, a, args),
        Command::Train(a) => train(cfg, a, args),
        Command::Craft(a) => craft(cfg, a, args),
        Command::Eval(a) => eval(cfg, a, args),
        Command::Transfer(a) => transfer(cfg, a, args),
    }
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingPath(path.to_path_buf()))
    }
}

fn snapshot<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).unwrap_or(serde_json::Value::Null)
}

fn channels(count: usize) -> Result<Channels, CliError> {
    Channels::from_count(count).ok_or_else(|| CliError::Config(format!("unsupported channel count {count}")))
}

/// Loads a gallery directory shaped for `model`, tagging it with `role`.
fn gallery_for(model: &ExtractorModel, dir: &Path, role: DatasetRole) -> Result<IdentityDataset, CliError> {
    require(dir)?;
    let (h, _, c) = model.input_dims();
    let (data, report) = load_directory(dir, channels(c)?, h)?;
    for label in &report.skipped_empty {
        log::warn!("{}: identity '{label}' has no images", dir.display());
    }
    Ok(data.with_role(role))
}

fn open_model(path: &Path, run: &mut RunDir) -> Result<ExtractorModel, CliError> {
    require(path)?;
    let file = if path.is_dir() { path.join(MODEL_FILE) } else { path.to_path_buf() };
    let model = load_model(&file)?;
    run.record_input(&file);
    Ok(model)
}

fn split_and_save(
    all: &IdentityDataset,
    fraction: f64,
    seed: u64,
    run: &mut RunDir,
) -> Result<(IdentityDataset, IdentityDataset), CliError> {
    let (train, test) = split_disjoint(all, fraction, seed)?;
    run.stage("split");
    let root = run.root().to_path_buf();
    run.record(save_directory(&train, &root.join("train"))?);
    run.record(save_directory(&test, &root.join("test"))?);
    run.stage("write");
    #[derive(Serialize)]
    struct Summary<'a> {
        train_identities: Vec<&'a str>,
        test_identities: Vec<&'a str>,
        train_images: usize,
        test_images: usize,
        image_shape: (usize, usize, usize),
    }
    run.write_json(
        "dataset.json",
        &Summary {
            train_identities: train.labels().collect(),
            test_identities: test.labels().collect(),
            train_images: train.image_count(),
            test_images: test.image_count(),
            image_shape: train.image_shape(),
        },
    )?;
    Ok((train, test))
}

fn gen_data(mut cfg: RunConfig, a: GenDataArgs, args: Vec<String>) -> Result<(), CliError> {
    let s = &mut cfg.synth;
    if let Some(v) = a.identities {
        s.identity_count = v;
    }
    if let Some(v) = a.images {
        s.images_per_identity = v;
    }
    if let Some(v) = a.size {
        s.image_size = v;
    }
    if let Some(v) = a.channels {
        s.channels = v;
    }
    if let Some(v) = a.seed {
        s.rng_seed = v;
    }
    if let Some(v) = a.split {
        cfg.train_fraction = v;
    }
    let split_seed = a.seed.unwrap_or(cfg.stage_seed());
    let mut run = RunDir::create(&a.out, "gen-data", args, snapshot(&cfg))?;
    let all = generate_synthetic(&cfg.synth)?;
    run.stage("generate");
    info!("generated {} identities, {} images", all.identity_count(), all.image_count());
    split_and_save(&all, cfg.train_fraction, split_seed, &mut run)?;
    run.finish()?;
    Ok(())
}

fn ingest(mut cfg: RunConfig, a: IngestArgs, args: Vec<String>) -> Result<(), CliError> {
    require(&a.src)?;
    if let Some(v) = a.split {
        cfg.train_fraction = v;
    }
    let seed = a.seed.unwrap_or(cfg.stage_seed());
    let mut run = RunDir::create(&a.out, "ingest", args, snapshot(&cfg))?;
    let (all, report) = load_directory(&a.src, channels(a.channels as usize)?, a.size)?;
    for label in &report.skipped_empty {
        log::warn!("identity '{label}' has no PNG images; skipped");
    }
    for path in &report.ignored {
        info!("ignored {}", path.display());
    }
    run.stage("load");
    split_and_save(&all, cfg.train_fraction, seed, &mut run)?;
    run.finish()?;
    Ok(())
}

fn train(mut cfg: RunConfig, a: TrainArgs, args: Vec<String>) -> Result<(), CliError> {
    require(&a.data)?;
    if let Some(arch) = a.arch {
        cfg.arch = arch;
    }
    if let Some(v) = a.embedding_dim {
        cfg.embedding_dim = v;
    }
    let mut tc = cfg.train_config();
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.lr {
        tc.learning_rate = v;
    }
    if let Some(v) = a.batch {
        tc.batch_size = v;
    }
    if let Some(v) = a.weight_decay {
        tc.weight_decay = v;
    }
    if let Some(v) = a.momentum {
        tc.momentum = v;
    }
    if let Some(v) = a.seed {
        tc.rng_seed = v;
    }
    cfg.train = Some(tc.clone());

    let (run_root, model_path) = if a.out.extension().is_some_and(|e| e == "uaxm") {
        let root = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        (root.to_path_buf(), a.out.clone())
    } else {
        (a.out.clone(), a.out.join(MODEL_FILE))
    };
    let mut run = RunDir::create(&run_root, "train", args, snapshot(&cfg))?;
    let (data, _) = load_directory(&a.data, channels(a.channels as usize)?, a.size)?;
    let data = data.with_role(DatasetRole::Train);
    run.stage("load");

    let spec = ExtractorSpec::for_arch(
        cfg.arch,
        InputShape::square(a.size, a.channels as usize),
        cfg.embedding_dim,
        data.identity_count(),
    );
    let model = init_model(spec, tc.rng_seed)?;
    info!(
        "training {} ({} parameters) on {} identities",
        cfg.arch,
        model.parameter_count(),
        data.identity_count()
    );
    let (model, report) = train_classifier(model, &data, &tc)?;
    run.stage("train");
    save_model(&model, &model_path)?;
    run.record([model_path]);

    #[derive(Serialize)]
    struct TrainSummary<'a> {
        arch: &'a str,
        classes: Vec<&'a str>,
        epochs: usize,
        final_train_accuracy: f64,
        epoch_losses: &'a [f64],
    }
    run.write_json(
        "train_report.json",
        &TrainSummary {
            arch: cfg.arch.id(),
            classes: data.labels().collect(),
            epochs: tc.epochs,
            final_train_accuracy: report.final_train_accuracy,
            epoch_losses: &report.epoch_losses,
        },
    )?;
    run.finish()?;
    Ok(())
}

fn craft(mut cfg: RunConfig, a: CraftArgs, args: Vec<String>) -> Result<(), CliError> {
    let c = &mut cfg.craft;
    let norm = a.norm.unwrap_or(c.budget.norm());
    c.budget = match (a.xi, a.epsilon) {
        (Some(xi), _) => PerturbationBudget::new(norm, xi)?,
        (None, Some(eps)) => PerturbationBudget::from_epsilon(norm, eps)?,
        (None, None) => PerturbationBudget::new(norm, c.budget.xi())?,
    };
    if let Some(v) = a.iters {
        c.iterations = v;
    }
    if let Some(v) = a.batch {
        c.batch_size = v;
    }
    if let Some(v) = a.lr {
        c.learning_rate = v;
    }
    if let Some(v) = a.seed {
        c.rng_seed = v;
    }
    if let Some(v) = a.metric {
        c.metric = v;
    }
    if let Some(v) = a.projection {
        c.projection = v;
    }
    if let Some(v) = a.sampling {
        c.sampling = v;
    }

    let mut run = RunDir::create(&a.out, "craft", args, snapshot(&cfg))?;
    let model = open_model(&a.model, &mut run)?;
    let train = gallery_for(&model, &a.train, DatasetRole::Train)?;
    run.stage("load");

    let seed_image = match (&a.seed_image, &a.seed_identity) {
        (Some(path), _) => {
            require(path)?;
            let (h, _, ch) = model.input_dims();
            run.record_input(path);
            preprocess_to(&load_png(path, channels(ch)?)?, h)?
        }
        (None, label) => {
            let label = match label {
                Some(l) => l.clone(),
                None => train.labels().next().expect("non-empty gallery").to_owned(),
            };
            let images = train
                .images_of(&label)
                .ok_or_else(|| CliError::Selection(format!("identity '{label}' is not in the train gallery")))?;
            images
                .get(a.seed_index)
                .ok_or_else(|| {
                    CliError::Selection(format!(
                        "identity '{label}' has {} images; index {} is out of range",
                        images.len(),
                        a.seed_index
                    ))
                })?
                .clone()
        }
    };

    let model_id = a.model_id.unwrap_or_else(|| model.spec().arch.id().to_owned());
    let artifact = craft_uax(&model, &seed_image, &train, &cfg.craft)?.with_source_model(model_id);
    run.stage("craft");
    info!("final loss {}", artifact.final_loss());
    run.record(save_artifact(&artifact, run.root())?);
    run.finish()?;
    Ok(())
}

fn load_artifacts(dirs: &[PathBuf], run: &mut RunDir) -> Result<Vec<UaxArtifact>, CliError> {
    dirs.iter()
        .map(|d| {
            require(d)?;
            let artifact = load_artifact(d)?;
            for name in ["nu.f64", "nu.json", "seed.f64"] {
                run.record_input(&d.join(name));
            }
            Ok(artifact)
        })
        .collect()
}

fn threshold(
    model: &ExtractorModel,
    gallery: &IdentityDataset,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(EerPoint, crate::metrics::ScoreSet), CliError> {
    let scores = build_scores(model, gallery, cfg.pair_budget, seed, cfg.metric)?;
    Ok((compute_eer(&scores)?, scores))
}

fn eval(mut cfg: RunConfig, a: EvalArgs, args: Vec<String>) -> Result<(), CliError> {
    if let Some(v) = a.hist_bins {
        cfg.hist_bins = v;
    }
    if let Some(v) = a.pair_budget {
        cfg.pair_budget = v;
    }
    if let Some(v) = a.metric {
        cfg.metric = v;
    }
    let seed = a.seed.unwrap_or(cfg.stage_seed());
    let mut run = RunDir::create(&a.out, "eval", args, snapshot(&cfg))?;
    let model = open_model(&a.model, &mut run)?;
    let artifacts = load_artifacts(&a.uax, &mut run)?;
    let train = gallery_for(&model, &a.train, DatasetRole::Train)?;
    let test = match &a.test {
        Some(dir) => Some(gallery_for(&model, dir, DatasetRole::Test)?),
        None => None,
    };
    run.stage("load");

    let (point, train_scores) = threshold(&model, &train, &cfg, seed)?;
    run.write_json("eer.json", &point)?;
    run.stage("threshold");

    let train_emb = GalleryEmbeddings::build(&model, &train)?;
    let test_emb = match &test {
        Some(t) => GalleryEmbeddings::build(&model, t)?,
        None => train_emb.clone(),
    };
    let mut train_reports = Vec::with_capacity(artifacts.len());
    let mut test_reports = Vec::with_capacity(artifacts.len());
    let mut uax_train = Vec::new();
    let mut uax_test = Vec::new();
    for artifact in &artifacts {
        let (r_train, r_test) = evaluate_with_galleries(&model, artifact, &train_emb, &test_emb, Some(&point))?;
        let probe = model.embed(artifact.adversarial_image())?;
        let own = |g: &GalleryEmbeddings| -> Result<Vec<f64>, CliError> {
            let g = match artifact.seed_label().filter(|l| g.contains(l)) {
                Some(label) => g.without(label)?,
                None => g.clone(),
            };
            Ok(g.distances(&probe, point.metric)?)
        };
        uax_train.extend(own(&train_emb)?);
        uax_test.extend(own(&test_emb)?);
        train_reports.push(r_train);
        test_reports.push(r_test);
    }
    run.stage("evaluate");

    run.write_json("report_train.json", &train_reports)?;
    let hist = histogram(
        &train_scores.genuine,
        &train_scores.imposter,
        &uax_train,
        cfg.hist_bins,
        None,
    )?;
    run.write("hist_train.csv", hist.to_csv())?;
    #[derive(Serialize)]
    struct Summary {
        threshold: EerPoint,
        train: crate::metrics::SeedSummary,
        test: Option<crate::metrics::SeedSummary>,
    }
    let mut summary = Summary {
        threshold: point,
        train: summarize(&train_reports),
        test: None,
    };
    if let Some(test) = &test {
        run.write_json("report_test.json", &test_reports)?;
        let test_scores = build_scores(&model, test, cfg.pair_budget, seed, cfg.metric)?;
        let hist = histogram(&test_scores.genuine, &test_scores.imposter, &uax_test, cfg.hist_bins, None)?;
        run.write("hist_test.csv", hist.to_csv())?;
        summary.test = Some(summarize(&test_reports));
    }
    run.write_json("summary.json", &summary)?;
    run.stage("report");
    run.finish()?;
    Ok(())
}

fn transfer(mut cfg: RunConfig, a: TransferArgs, args: Vec<String>) -> Result<(), CliError> {
    if let Some(v) = a.pair_budget {
        cfg.pair_budget = v;
    }
    if let Some(v) = a.metric {
        cfg.metric = v;
    }
    let seed = a.seed.unwrap_or(cfg.stage_seed());
    let mut run = RunDir::create(&a.out, "transfer", args, snapshot(&cfg))?;
    let mut models = Vec::with_capacity(a.models.len());
    for entry in &a.models {
        let (id, path) = match entry.split_once('=') {
            Some((id, path)) => (Some(id.to_owned()), PathBuf::from(path)),
            None => (None, PathBuf::from(entry)),
        };
        let model = open_model(&path, &mut run)?;
        let id = id.unwrap_or_else(|| model.spec().arch.id().to_owned());
        if models.iter().any(|(other, _): &(String, ExtractorModel)| *other == id) {
            return Err(CliError::Selection(format!("model id '{id}' given twice")));
        }
        models.push((id, model));
    }
    let artifacts = load_artifacts(&a.uax, &mut run)?;
    let first = &models[0].1;
    let train = gallery_for(first, &a.train, DatasetRole::Train)?;
    let test = match &a.test {
        Some(dir) => Some(gallery_for(first, dir, DatasetRole::Test)?),
        None => None,
    };
    run.stage("load");

    let mut points = Vec::with_capacity(models.len());
    for (_, model) in &models {
        points.push(threshold(model, &train, &cfg, seed)?.0);
    }
    run.stage("threshold");
    let refs: Vec<(&str, &dyn Embedder)> = models.iter().map(|(id, m)| (id.as_str(), m as &dyn Embedder)).collect();

    #[derive(Serialize)]
    struct TransferReport {
        thresholds: Vec<(String, EerPoint)>,
        train: crate::metrics::TransferMatrix,
        test: Option<crate::metrics::TransferMatrix>,
    }
    let on_train = transfer_matrix(&refs, &artifacts, &train, &points)?;
    run.write("transfer_train.csv", on_train.to_csv())?;
    let on_test = match &test {
        Some(t) => {
            let m = transfer_matrix(&refs, &artifacts, t, &points)?;
            run.write("transfer_test.csv", m.to_csv())?;
            Some(m)
        }
        None => None,
    };
    run.stage("transfer");
    run.write_json(
        "transfer.json",
        &TransferReport {
            thresholds: models.iter().map(|(id, _)| id.clone()).zip(points.iter().copied()).collect(),
            train: on_train,
            test: on_test,
        },
    )?;
    run.finish()?;
    Ok(())
}
