use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nutricluster_core::clustering::{ApConfig, Hierarchy};
use nutricluster_core::evaluation::{Conventions, EvaluationReport, MaeScope, PredictionLog, PredictionRow};
use nutricluster_core::multitask::{
    derive_cluster_labels, fit, predict, stratified_split, Checkpoint, Dims, LabeledSample, TaskWeights,
    TrainingConfig,
};
use nutricluster_core::pipeline::{cluster, evaluate_clusters, selected_similarity, visual_similarity, DomainSelection};
use nutricluster_core::report::{compare_runs, prediction_report};
use nutricluster_core::similarity::{FeatureRow, SimilarityConfig, SimilarityMatrix};
use nutricluster_core::synthkit::{generate_confusion_log, generate_planted_dataset, PlantedConfig};
use nutricluster_core::{Error, Result};

use crate::args::*;
use crate::inputs::{table_digest, Inputs, TableFile};
use crate::manifest::{sidecar, Outputs};

pub fn run(cli: Cli) -> Result<()> {
    let flags = serde_json::to_value(&cli.command)?;
    let name = cli.command.name();
    let mut inputs = Inputs::default();
    let mut outputs = Outputs::new();
    let (manifest, seed) = match &cli.command {
        Command::Ingest(a) => (ingest(a, &mut inputs, &mut outputs)?, None),
        Command::Similarity(a) => (similarity(a, &mut inputs, &mut outputs)?, None),
        Command::Cluster(a) => (cluster_cmd(a, &mut inputs, &mut outputs)?, Some(a.seed)),
        Command::EvalClusters(a) => (eval_clusters(a, &mut inputs, &mut outputs)?, None),
        Command::Mae(a) => (mae(a, &mut inputs, &mut outputs)?, None),
        Command::TrainToy(a) => (train_toy(a, &mut inputs, &mut outputs)?, Some(a.seed)),
        Command::Synth(SynthCommand::Planted(a)) => (planted(a, &mut outputs)?, Some(a.seed)),
        Command::Synth(SynthCommand::Confusion(a)) => (confusion(a, &mut inputs, &mut outputs)?, Some(a.seed)),
        Command::Report(a) => (report(a, &mut inputs, &mut outputs)?, None),
    };
    outputs.finish(&manifest, name, flags, inputs.digests, seed)
}

fn optional_features(inputs: &mut Inputs, path: &Option<PathBuf>) -> Result<Option<Vec<FeatureRow>>> {
    path.as_deref().map(|p| inputs.features(p)).transpose()
}

fn ingest(a: &IngestArgs, inputs: &mut Inputs, out: &mut Outputs) -> Result<PathBuf> {
    let features = optional_features(inputs, &a.features)?;
    let table = inputs.table(&a.source, features.as_deref())?;
    out.add_json(&a.out, &TableFile::new(table)?)?;
    Ok(sidecar(&a.out))
}

fn similarity(a: &SimilarityArgs, inputs: &mut Inputs, out: &mut Outputs) -> Result<PathBuf> {
    let nutrients = a.nutrients.clone().unwrap_or_default();
    let selection = DomainSelection {
        nutrients: nutrients.clone(),
        weights: a.weights.clone(),
        visual: !a.no_visual,
        allow_energy_mix: a.allow_energy_mix,
        ovl_aggregation: a.ovl_aggregation,
    };
    // rule checks before any file is touched
    if !nutrients.is_empty() {
        let mut config = SimilarityConfig::new(nutrients);
        config.allow_energy_mix = a.allow_energy_mix;
        if let Some(w) = &a.weights {
            config.weights = w.clone();
        }
        config.validate()?;
    }
    if selection.visual && a.features.is_none() {
        return Err(Error::Config("the visual domain needs --features (or pass --no-visual)".into()));
    }
    let features = optional_features(inputs, &a.features)?;
    let table = inputs.table(&a.source, features.as_deref())?;
    let sv = match (&features, selection.visual) {
        (Some(rows), true) => Some(visual_similarity(rows, a.ovl_aggregation)?),
        _ => None,
    };
    let sim = selected_similarity(&table, sv.as_ref(), &selection)?;
    out.add_json(&a.out, &sim)?;
    Ok(sidecar(&a.out))
}

fn cluster_cmd(a: &ClusterArgs, inputs: &mut Inputs, out: &mut Outputs) -> Result<PathBuf> {
    let sim: SimilarityMatrix = inputs.json(&a.similarity)?;
    let config = ApConfig {
        preference: a.preference,
        damping: a.damping,
        max_iterations: a.max_iterations,
        convergence_window: a.convergence_window,
        seed: a.seed,
        tie_noise: !a.no_tie_noise,
    };
    let hierarchy = cluster(&sim, &config)?;
    out.add_json(&a.out, &hierarchy)?;
    Ok(sidecar(&a.out))
}

fn eval_clusters(a: &EvalClustersArgs, inputs: &mut Inputs, out: &mut Outputs) -> Result<PathBuf> {
    let hierarchy: Hierarchy = inputs.json(&a.hierarchy)?;
    let features = optional_features(inputs, &a.features)?;
    let table = inputs.table(&a.source, features.as_deref())?;
    let sv = features
        .as_deref()
        .map(|rows| visual_similarity(rows, a.ovl_aggregation))
        .transpose()?;
    let eval = evaluate_clusters(&hierarchy, &table, sv.as_ref(), &a.nutrients, a.variance_convention)?;
    let report = EvaluationReport {
        accuracy: None,
        mae: BTreeMap::new(),
        variances: Some(eval.variances),
        distances: eval.distances,
        conventions: Conventions::new(a.variance_convention, MaeScope::All),
        table_digest: Some(table_digest(&table)?),
    };
    out.add_json(&a.out, &report)?;
    Ok(sidecar(&a.out))
}

fn mae(a: &MaeArgs, inputs: &mut Inputs, out: &mut Outputs) -> Result<PathBuf> {
    let log = inputs.predictions(&a.predictions)?;
    let features = optional_features(inputs, &a.features)?;
    let table = inputs.table(&a.source, features.as_deref())?;
    let mut report = prediction_report(&log, &table, &a.nutrients, Some(table_digest(&table)?))?;
    report.conventions = Conventions::new(a.variance_convention, a.scope);
    if let Some(path) = &a.hierarchy {
        let hierarchy: Hierarchy = inputs.json(path)?;
        let sv = features
            .as_deref()
            .map(|rows| visual_similarity(rows, a.ovl_aggregation))
            .transpose()?;
        let eval = evaluate_clusters(&hierarchy, &table, sv.as_ref(), &a.nutrients, a.variance_convention)?;
        report.variances = Some(eval.variances);
        report.distances = eval.distances;
    }
    out.add_json(&a.out, &report)?;
    Ok(sidecar(&a.out))
}

fn default_predictions_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".predictions.csv");
    PathBuf::from(name)
}

fn train_toy(a: &TrainToyArgs, inputs: &mut Inputs, out: &mut Outputs) -> Result<PathBuf> {
    let rows = inputs.features(&a.features)?;
    let hierarchy: Hierarchy = inputs.json(&a.hierarchy)?;
    let categories: Vec<String> = {
        let mut c: Vec<String> = rows.iter().map(|r| r.category.clone()).collect();
        c.sort();
        c.dedup();
        c
    };
    let cluster_of = derive_cluster_labels(&hierarchy, &categories)?;
    let samples: Vec<LabeledSample> = rows
        .iter()
        .map(|r| LabeledSample {
            features: r.values.clone(),
            category: categories.binary_search(&r.category).expect("collected above"),
            cluster: cluster_of[&r.category],
        })
        .collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.category).collect();
    let (train_idx, test_idx) = stratified_split(&labels, a.test_fraction, a.seed)?;
    let train: Vec<LabeledSample> = train_idx.iter().map(|&i| samples[i].clone()).collect();

    let config = TrainingConfig {
        weights: TaskWeights::new(a.lambda1, a.lambda2),
        learning_rate: a.learning_rate,
        decay_factor: a.decay_factor,
        decay_interval: a.decay_interval,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let d = rows.first().map_or(0, |r| r.values.len());
    let dims = Dims {
        d,
        h: if a.identity_shared { d } else { a.hidden },
        k: categories.len(),
        m: hierarchy.len(),
    };
    let outcome = fit(dims, a.identity_shared, &train, &config)?;

    let mut correct = 0usize;
    let mut log = PredictionLog { rows: Vec::new() };
    for &i in &test_idx {
        let p = predict(&outcome.model, &samples[i].features)?;
        correct += usize::from(p.category == samples[i].category);
        log.rows.push(PredictionRow {
            sample_id: format!("{}_{i:05}", rows[i].category),
            true_category: rows[i].category.clone(),
            predicted_category: categories[p.category].clone(),
        });
    }

    out.add_json(&a.out, &Checkpoint::new(&outcome.model, &config, categories))?;
    let predictions = a.predictions.clone().unwrap_or_else(|| default_predictions_path(&a.out));
    out.add(&predictions, log.to_csv()?);

    let summary = serde_json::json!({
        "train_samples": train_idx.len(),
        "test_samples": test_idx.len(),
        "test_accuracy": if test_idx.is_empty() { None } else { Some(correct as f64 / test_idx.len() as f64) },
        "loss_trace": outcome.loss_trace,
    });
    println!("{summary}");
    Ok(sidecar(&a.out))
}

fn planted(a: &PlantedArgs, out: &mut Outputs) -> Result<PathBuf> {
    let config = PlantedConfig {
        groups: a.groups,
        per_group: a.per_group,
        dim: a.dim,
        feature_spread: a.spread,
        separation: a.separation,
        sample_noise: a.noise,
        visual_groups: a.visual_groups,
        items_per_category: a.items_per_category,
        images_per_category: a.images_per_category,
        seed: a.seed,
        ..PlantedConfig::default()
    };
    let data = generate_planted_dataset(&config)?;
    out.add(a.out.join("nutrients.csv"), data.nutrient_csv()?);
    out.add(a.out.join("counts.csv"), data.counts_csv()?);
    out.add(a.out.join("features.csv"), data.features_csv()?);
    out.add(a.out.join("ground_truth.json"), data.ground_truth_json()? + "\n");
    Ok(a.out.join("manifest.json"))
}

fn confusion(a: &ConfusionArgs, inputs: &mut Inputs, out: &mut Outputs) -> Result<PathBuf> {
    let features = optional_features(inputs, &a.features)?;
    let table = inputs.table(&a.source, features.as_deref())?;
    let hierarchy: Hierarchy = inputs.json(&a.hierarchy)?;
    let log = generate_confusion_log(&table, &hierarchy, a.error_rate, a.mode, a.seed)?;
    out.add(&a.out, log.to_csv()?);
    Ok(sidecar(&a.out))
}

fn report(a: &ReportArgs, inputs: &mut Inputs, out: &mut Outputs) -> Result<PathBuf> {
    let baseline: EvaluationReport = inputs.json(&a.baseline)?;
    let candidates = a
        .candidates
        .iter()
        .map(|p| Ok((p.display().to_string(), inputs.json::<EvaluationReport>(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let comparison = compare_runs((&a.baseline.display().to_string(), &baseline), &candidates, a.scope)?;
    out.add_json(&a.out, &comparison)?;
    Ok(sidecar(&a.out))
}
