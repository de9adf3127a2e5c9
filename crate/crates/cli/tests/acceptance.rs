//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nutricluster_core::clustering::{affinity_propagation_values, ApConfig, ClusterAssignment, Hierarchy};
use nutricluster_core::evaluation::{
    cluster_variances, distance_report, intra_cluster_distance, nutrient_mae, relative_error_reduction,
    visual_distance_matrix, MaeScope, VarianceConvention,
};
use nutricluster_core::multitask::{
    fit, loss_gradient, multitask_loss, predict, stratified_split, Dims, LabeledSample, MultiTaskModel, TaskWeights,
    TrainingConfig,
};
use nutricluster_core::nutrient_data::{inter_class_std, CategoryEntry, CategoryTable, Nutrient};
use nutricluster_core::pipeline::{cluster, evaluate_clusters, selected_similarity, visual_similarity, DomainSelection};
use nutricluster_core::similarity::{
    combine_similarity, gaussian_ovl, nutrient_similarity_matrix, weighted_harmonic_mean, OvlAggregation, Provenance,
    SimilarityConfig, SimilarityMatrix,
};
use nutricluster_core::synthkit::{generate_confusion_log, generate_planted_dataset, ConfusionMode, PlantedConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ids(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("c{i:02}")).collect()
}

fn random_table(rng: &mut ChaCha8Rng, k: usize) -> CategoryTable {
    CategoryTable::new(
        ids(k)
            .into_iter()
            .map(|id| CategoryEntry {
                id,
                nutrients: [
                    rng.random_range(0.0..900.0),
                    rng.random_range(0.0..80.0),
                    rng.random_range(0.0..40.0),
                    rng.random_range(0.0..40.0),
                ],
                image_count: rng.random_range(1..60),
            })
            .collect(),
    )
    .unwrap()
}

fn matrix(values: Vec<Vec<f64>>) -> SimilarityMatrix {
    SimilarityMatrix {
        labels: ids(values.len()),
        values,
        provenance: Provenance::default(),
    }
}

fn similarity_suite() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.random_range(2..10);
        let table = random_table(&mut rng, k);
        let n = Nutrient::ALL[rng.random_range(0..4)];
        let values = table.values(n);
        let mean = values.iter().sum::<f64>() / k as f64;
        let sigma = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k as f64).sqrt();
        let stats = inter_class_std(&table).map_err(|e| e.to_string())?;
        let m = nutrient_similarity_matrix(&table, &stats, &SimilarityConfig::new(vec![n])).map_err(|e| e.to_string())?;
        let (i, j) = (rng.random_range(0..k), rng.random_range(0..k));
        let oracle = (-(values[i] - values[j]).powi(2) / (2.0 * sigma * sigma)).exp().max(1e-12);
        let s = m.get(i, j);
        ensure(s > 0.0 && s <= 1.0, || format!("score {s} outside (0, 1]"))?;
        ensure(s == m.get(j, i), || format!("asymmetric pair ({i},{j})"))?;
        worst = worst.max((s - oracle).abs());
        ensure(worst <= 1e-12, || format!("RBF differs from scalar oracle by {worst:e}"))?;

        let len = rng.random_range(1..6);
        let scores: Vec<f64> = (0..len).map(|_| rng.random_range(1e-6..1.0)).collect();
        let weights: Vec<f64> = (0..len).map(|_| rng.random_range(0.01..10.0)).collect();
        let h = weighted_harmonic_mean(&scores, &weights).map_err(|e| e.to_string())?;
        let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ensure(h >= lo && h <= hi, || format!("harmonic mean {h} outside [{lo}, {hi}]"))?;
        let c = rng.random_range(0.01..100.0);
        let scaled: Vec<f64> = weights.iter().map(|w| w * c).collect();
        let hs = weighted_harmonic_mean(&scores, &scaled).map_err(|e| e.to_string())?;
        ensure((h - hs).abs() <= 1e-12, || format!("weight scaling moved the mean by {:e}", (h - hs).abs()))?;

        let (a, b) = (rng.random_range(1e-6..1.0), rng.random_range(1e-6..1.0));
        let ma = matrix(vec![vec![1.0, a], vec![a, 1.0]]);
        let mb = matrix(vec![vec![1.0, b], vec![b, 1.0]]);
        let ab = combine_similarity(&ma, &mb).map_err(|e| e.to_string())?.get(0, 1);
        let ba = combine_similarity(&mb, &ma).map_err(|e| e.to_string())?.get(0, 1);
        ensure(ab == ba, || format!("combination not commutative for ({a}, {b})"))?;
        ensure(ab >= a.min(b) && ab <= a.max(b), || format!("combination {ab} outside its operands"))?;
    }
    Ok(format!("1000 pairs, max RBF error {worst:.1e}"))
}

fn normal_pdf(x: f64, m: f64, s: f64) -> f64 {
    (-(x - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
}

fn trapezoid_ovl(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    let lo = (m1 - 10.0 * s1).min(m2 - 10.0 * s2);
    let hi = (m1 + 10.0 * s1).max(m2 + 10.0 * s2);
    let n = 100_000;
    let h = (hi - lo) / (n - 1) as f64;
    let f = |i: usize| {
        let x = lo + i as f64 * h;
        normal_pdf(x, m1, s1).min(normal_pdf(x, m2, s2))
    };
    let inner: f64 = (1..n - 1).map(f).sum();
    h * (inner + 0.5 * (f(0) + f(n - 1)))
}

fn ovl_correctness() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let (m1, m2) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let s1 = rng.random_range(0.2..4.0);
        // every other pair has unequal variances
        let s2 = if case % 2 == 0 { s1 } else { rng.random_range(0.2..4.0) };
        let got = gaussian_ovl(m1, s1, m2, s2).map_err(|e| e.to_string())?;
        let err = (got - trapezoid_ovl(m1, s1, m2, s2)).abs();
        worst = worst.max(err);
        ensure(err <= 1e-6, || format!("OVL({m1}, {s1}, {m2}, {s2}) off by {err:e}"))?;
    }
    Ok(format!("200 pairs, max error {worst:.1e}"))
}

/// Every partition whose exemplar set attains the maximal net similarity
/// (preference per exemplar plus best-exemplar similarity of every other
/// point). More than one comes back only when the optimum is tied.
fn exhaustive_partitions(s: &[Vec<f64>], pref: f64) -> Vec<BTreeSet<BTreeSet<usize>>> {
    let n = s.len();
    let net = |mask: u32| -> f64 {
        (0..n)
            .map(|i| {
                if mask & (1 << i) != 0 {
                    pref
                } else {
                    (0..n)
                        .filter(|e| mask & (1 << e) != 0)
                        .map(|e| s[i][e])
                        .fold(f64::NEG_INFINITY, f64::max)
                }
            })
            .sum()
    };
    let best = (1u32..(1 << n)).map(net).fold(f64::NEG_INFINITY, f64::max);
    let mut found = Vec::new();
    for mask in (1u32..(1 << n)).filter(|&m| net(m) >= best - 1e-12) {
        let exemplars: Vec<usize> = (0..n).filter(|e| mask & (1 << e) != 0).collect();
        let mut groups = vec![BTreeSet::new(); exemplars.len()];
        for i in 0..n {
            let slot = exemplars.iter().position(|&e| e == i).unwrap_or_else(|| {
                (0..exemplars.len())
                    .max_by(|&a, &b| s[i][exemplars[a]].total_cmp(&s[i][exemplars[b]]).then(b.cmp(&a)))
                    .unwrap()
            });
            groups[slot].insert(i);
        }
        let p: BTreeSet<BTreeSet<usize>> = groups.into_iter().collect();
        if !found.contains(&p) {
            found.push(p);
        }
    }
    found
}

fn is_partition(a: &ClusterAssignment, n: usize) -> bool {
    let mut seen = vec![0usize; n];
    a.groups().iter().flatten().for_each(|&i| seen[i] += 1);
    seen.iter().all(|&c| c == 1) && a.exemplars.iter().all(|&e| a.membership[e] == e)
}

fn ap_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut matches, mut tied) = (0, 0);
    for case in 0..50u64 {
        let k = rng.random_range(4..=8);
        let blocks = rng.random_range(2..=3);
        // each block gets at least two members, the rest are spread at random
        let mut labels: Vec<usize> = (0..k).map(|i| if i < 2 * blocks { i / 2 } else { rng.random_range(0..blocks) }).collect();
        for i in (1..k).rev() {
            labels.swap(i, rng.random_range(0..=i));
        }
        let s: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| if i == j { 1.0 } else if labels[i] == labels[j] { 0.9 } else { 0.1 })
                    .collect()
            })
            .collect();
        let a = affinity_propagation_values(&s, &ApConfig { seed: case, ..ApConfig::default() })
            .map_err(|e| format!("case {case}: {e}"))?;
        ensure(is_partition(&a, k), || format!("case {case}: not a partition"))?;
        let got: BTreeSet<BTreeSet<usize>> = a.groups().into_iter().map(|g| g.into_iter().collect()).collect();
        let optimal = exhaustive_partitions(&s, a.preference);
        if optimal.len() > 1 {
            tied += 1;
        }
        if optimal.contains(&got) {
            matches += 1;
        }
    }
    ensure(matches >= 48, || format!("{matches}/50 match the exhaustive search"))?;
    Ok(format!("{matches}/50 match ({tied} with tied optima), 50/50 valid partitions"))
}

fn random_hierarchy(rng: &mut ChaCha8Rng, k: usize, max_clusters: usize) -> (Hierarchy, Vec<usize>) {
    let labels: Vec<usize> = (0..k).map(|_| rng.random_range(0..max_clusters)).collect();
    let names = ids(k);
    let mut groups = vec![Vec::new(); max_clusters];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].push(names[i].clone());
    }
    let h = Hierarchy::from_groups(groups.into_iter().filter(|g| !g.is_empty()).collect()).unwrap();
    (h, labels)
}

fn variance_decomposition() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let k = rng.random_range(2..12);
        let table = random_table(&mut rng, k);
        let (h, labels) = random_hierarchy(&mut rng, k, 5);
        let report = cluster_variances(&h, &table, &Nutrient::ALL, VarianceConvention::Weighted).map_err(|e| e.to_string())?;
        for n in Nutrient::ALL {
            let images: Vec<(usize, f64)> = table
                .entries()
                .iter()
                .zip(&labels)
                .flat_map(|(e, &l)| std::iter::repeat_n((l, e.nutrients[n.index()]), e.image_count as usize))
                .collect();
            let count = images.len() as f64;
            let mean = images.iter().map(|x| x.1).sum::<f64>() / count;
            let total = images.iter().map(|x| (x.1 - mean).powi(2)).sum::<f64>() / count;
            let e = report.nutrients[&n];
            let rel = (e.intra + e.inter - total).abs() / total.max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
            ensure(rel <= 1e-9, || format!("{n}: intra + inter misses per-image variance by {rel:e} relative"))?;
        }
    }
    Ok(format!("200 triples x 4 nutrients, max relative error {worst:.1e}"))
}

fn distance_metrics() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut checked = 0;
    for _ in 0..100 {
        let k = rng.random_range(2..10);
        let mut v = vec![vec![1.0; k]; k];
        for i in 0..k {
            for j in i + 1..k {
                let s = rng.random_range(1e-6..1.0);
                v[i][j] = s;
                v[j][i] = s;
            }
        }
        let sv = matrix(v.clone());
        let (h, _) = random_hierarchy(&mut rng, k, 4);
        let report = distance_report(&h, &visual_distance_matrix(&sv)).map_err(|e| e.to_string())?;
        let index = |name: &str| sv.labels.iter().position(|l| l == name).unwrap();

        let mut intra: Option<f64> = None;
        for c in h.clusters.iter().filter(|c| c.members.len() >= 2) {
            let (mut sum, mut pairs) = (0.0, 0.0);
            for a in &c.members {
                for b in &c.members {
                    if a != b {
                        sum += 1.0 - v[index(a)][index(b)];
                        pairs += 1.0;
                    }
                }
            }
            intra = Some(intra.map_or(sum / pairs, |m: f64| m.max(sum / pairs)));
        }
        let ex: Vec<usize> = h.clusters.iter().map(|c| index(&c.exemplar)).collect();
        let inter = (ex.len() >= 2).then(|| {
            let (mut sum, mut pairs) = (0.0, 0.0);
            for &a in &ex {
                for &b in &ex {
                    if a != b {
                        sum += 1.0 - v[a][b];
                        pairs += 1.0;
                    }
                }
            }
            sum / pairs
        });
        let close = |x: Option<f64>, y: Option<f64>| match (x, y) {
            (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
            (None, None) => true,
            _ => false,
        };
        ensure(close(report.intra, intra), || format!("intra {:?} vs oracle {intra:?}", report.intra))?;
        ensure(close(report.inter, inter), || format!("inter {:?} vs oracle {inter:?}", report.inter))?;
        checked += 1;
    }
    let singletons = Hierarchy::from_groups(ids(3).into_iter().map(|c| vec![c]).collect()).unwrap();
    let sv = matrix(vec![vec![1.0, 0.5, 0.4], vec![0.5, 1.0, 0.3], vec![0.4, 0.3, 1.0]]);
    let kind = intra_cluster_distance(&singletons, &visual_distance_matrix(&sv)).map(|_| ()).map_err(|e| e.kind());
    ensure(kind == Err("undefined_metric"), || format!("singleton-only partition gave {kind:?}"))?;
    Ok(format!("{checked} partitions, singleton-only partition raises undefined_metric"))
}

fn gradient_check() -> Result<String, String> {
    let settings = [TaskWeights::new(1.0, 0.0), TaskWeights::new(0.0, 1.0), TaskWeights::new(1.0, 1.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let w = settings[case % 3];
        let dims = Dims {
            d: rng.random_range(1..6),
            h: rng.random_range(1..8),
            k: rng.random_range(2..6),
            m: rng.random_range(2..4),
        };
        let mut model = MultiTaskModel::new(dims, rng.random()).map_err(|e| e.to_string())?;
        let flat: Vec<f64> = model.to_flat().iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        model.set_flat(&flat).map_err(|e| e.to_string())?;
        let batch: Vec<LabeledSample> = (0..rng.random_range(1..8))
            .map(|_| LabeledSample {
                features: (0..dims.d).map(|_| rng.random_range(-2.0..2.0)).collect(),
                category: rng.random_range(0..dims.k),
                cluster: rng.random_range(0..dims.m),
            })
            .collect();
        let analytic = loss_gradient(&model, &batch, w).map_err(|e| e.to_string())?.to_flat();
        let step = 1e-5;
        let mut probe = model.clone();
        for (i, a) in analytic.iter().enumerate() {
            let mut p = flat.clone();
            p[i] = flat[i] + step;
            probe.set_flat(&p).unwrap();
            let up = multitask_loss(&probe, &batch, w).map_err(|e| e.to_string())?;
            p[i] = flat[i] - step;
            probe.set_flat(&p).unwrap();
            let down = multitask_loss(&probe, &batch, w).map_err(|e| e.to_string())?;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
        ensure(worst < 1e-4, || format!("case {case}: max relative error {worst:e}"))?;
    }
    Ok(format!("100 configurations, max relative error {worst:.1e}"))
}

/// Nutrient groups share visual appearance in pairs, so visual similarity
/// alone cannot separate them.
fn shared_look(seed: u64) -> PlantedConfig {
    PlantedConfig {
        groups: 4,
        per_group: 5,
        visual_groups: Some(2),
        seed,
        ..PlantedConfig::default()
    }
}

fn planted_reproduction() -> Result<String, String> {
    let mut wins = 0;
    let mut ratios = Vec::new();
    for seed in 0..20 {
        let d = generate_planted_dataset(&shared_look(seed)).map_err(|e| e.to_string())?;
        let sv = visual_similarity(&d.features, OvlAggregation::Mean).map_err(|e| e.to_string())?;
        let ap = ApConfig { seed, ..ApConfig::default() };
        let run = |selection: DomainSelection| {
            let sim = selected_similarity(&d.table, Some(&sv), &selection)?;
            let h = cluster(&sim, &ap)?;
            evaluate_clusters(&h, &d.table, Some(&sv), &[Nutrient::Energy], VarianceConvention::Weighted)
        };
        let combined = run(DomainSelection::nutrients(vec![Nutrient::Energy])).map_err(|e| format!("seed {seed}: {e}"))?;
        let visual = run(DomainSelection::visual_only()).map_err(|e| format!("seed {seed}: {e}"))?;
        let (c, v) = (combined.variances.nutrients[&Nutrient::Energy], visual.variances.nutrients[&Nutrient::Energy]);
        if c.intra < v.intra && c.inter > v.inter {
            wins += 1;
        }
        ratios.push(combined.distances.and_then(|r| r.ratio).unwrap_or(f64::NAN));
    }
    let below = ratios.iter().filter(|r| **r < 1.0).count();
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ensure(wins >= 18, || format!("combined clustering wins in {wins}/20 seeds"))?;
    ensure(below == 20, || format!("distance ratio < 1 in {below}/20 seeds"))?;
    Ok(format!("wins {wins}/20, ratio < 1 in {below}/20 (max {max:.3})"))
}

fn better_mistakes() -> Result<String, String> {
    let mut wins = 0;
    let (mut within_sum, mut uniform_sum) = (0.0, 0.0);
    for seed in 0..20 {
        let d = generate_planted_dataset(&shared_look(seed)).map_err(|e| e.to_string())?;
        let sv = visual_similarity(&d.features, OvlAggregation::Mean).map_err(|e| e.to_string())?;
        let sim = selected_similarity(&d.table, Some(&sv), &DomainSelection::nutrients(vec![Nutrient::Energy]))
            .map_err(|e| e.to_string())?;
        let h = cluster(&sim, &ApConfig { seed, ..ApConfig::default() }).map_err(|e| e.to_string())?;
        let mae = |mode| -> Result<f64, String> {
            let log = generate_confusion_log(&d.table, &h, 0.3, mode, seed).map_err(|e| e.to_string())?;
            nutrient_mae(&log, &d.table, Nutrient::Energy, MaeScope::All).map_err(|e| e.to_string())
        };
        let (within, uniform) = (mae(ConfusionMode::WithinCluster)?, mae(ConfusionMode::Uniform)?);
        if within < uniform {
            wins += 1;
        }
        within_sum += within;
        uniform_sum += uniform;
    }
    let reduction = relative_error_reduction(within_sum / 20.0, uniform_sum / 20.0)
        .map_err(|e| e.to_string())?
        .reduction;
    ensure(wins >= 18, || format!("within_cluster lower in {wins}/20 seeds"))?;
    ensure(reduction > 0.0, || format!("relative error reduction {reduction}"))?;
    Ok(format!("within_cluster lower in {wins}/20, mean reduction {:.1}%", 100.0 * reduction))
}

fn multitask_trainer() -> Result<String, String> {
    let d = generate_planted_dataset(&PlantedConfig {
        sample_noise: 0.7,
        images_per_category: 30,
        seed: 9,
        ..PlantedConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let categories = d.table.labels();
    let cluster_of = d.ground_truth.cluster_of();
    let samples: Vec<LabeledSample> = d
        .features
        .iter()
        .map(|r| LabeledSample {
            features: r.values.clone(),
            category: categories.binary_search(&r.category).unwrap(),
            cluster: cluster_of[r.category.as_str()],
        })
        .collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.category).collect();
    let (train_idx, test_idx) = stratified_split(&labels, 0.2, 9).map_err(|e| e.to_string())?;
    let train: Vec<LabeledSample> = train_idx.iter().map(|&i| samples[i].clone()).collect();
    let dims = Dims { d: 16, h: 64, k: 20, m: 4 };
    ensure(d.ground_truth.len() == 4 && categories.len() == 20, || "unexpected planted shape".into())?;

    let run = |weights: TaskWeights| -> Result<(f64, Vec<f64>), String> {
        let config = TrainingConfig {
            weights,
            learning_rate: 0.5,
            decay_factor: 0.5,
            decay_interval: 50,
            epochs: 200,
            batch_size: 32,
            seed: 9,
        };
        let out = fit(dims, false, &train, &config).map_err(|e| e.to_string())?;
        let correct = test_idx
            .iter()
            .filter(|&&i| predict(&out.model, &samples[i].features).is_ok_and(|p| p.category == samples[i].category))
            .count();
        Ok((correct as f64 / test_idx.len() as f64, out.loss_trace))
    };
    let (joint, trace) = run(TaskWeights::new(1.0, 1.0))?;
    let (flat, _) = run(TaskWeights::new(1.0, 0.0))?;
    ensure(trace.iter().all(|l| l.is_finite()), || "non-finite loss".into())?;
    let (first, last) = (trace[0], *trace.last().unwrap());
    ensure(last < first, || format!("loss went from {first} to {last}"))?;
    ensure(joint >= 0.95, || format!("accuracy {joint:.4} with both heads"))?;
    ensure((joint - flat).abs() <= 0.05, || format!("accuracy gap {:.4}", (joint - flat).abs()))?;
    Ok(format!(
        "accuracy {:.1}% (1,1) vs {:.1}% (1,0), loss {first:.3} -> {last:.3}",
        100.0 * joint,
        100.0 * flat
    ))
}

fn run_pipeline(dir: &Path) -> Result<(), String> {
    let steps: [&[&str]; 9] = [
        &["synth", "planted", "--groups", "4", "--per-group", "5", "--dim", "16", "--visual-groups", "2", "--seed", "7", "--out", "data/"],
        &["similarity", "--nutrients", "E", "--features", "data/features.csv", "--table", "data/nutrients.csv", "--out", "S.json"],
        &["cluster", "--similarity", "S.json", "--seed", "7", "--out", "H.json"],
        &["eval-clusters", "--hierarchy", "H.json", "--features", "data/features.csv", "--table", "data/nutrients.csv", "--out", "eval.json"],
        &["synth", "confusion", "--table", "data/nutrients.csv", "--counts", "data/counts.csv", "--hierarchy", "H.json", "--error-rate", "0.3", "--seed", "7", "--out", "wc.csv"],
        &["synth", "confusion", "--table", "data/nutrients.csv", "--counts", "data/counts.csv", "--hierarchy", "H.json", "--error-rate", "0.3", "--mode", "uniform", "--seed", "7", "--out", "un.csv"],
        &["mae", "--predictions", "wc.csv", "--table", "data/nutrients.csv", "--counts", "data/counts.csv", "--out", "wc.json"],
        &["mae", "--predictions", "un.csv", "--table", "data/nutrients.csv", "--counts", "data/counts.csv", "--out", "un.json"],
        &["report", "--baseline", "un.json", "--candidate", "wc.json", "--out", "report.json"],
    ];
    let train = ["train-toy", "--features", "data/features.csv", "--hierarchy", "H.json", "--epochs", "10", "--seed", "7", "--out", "model.json"];
    for args in steps.iter().copied().chain([&train[..]]) {
        let out = Command::new(env!("CARGO_BIN_EXE_nutricluster"))
            .args(args)
            .current_dir(dir)
            .env("SOURCE_DATE_EPOCH", "1700000000")
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))?;
    }
    Ok(())
}

fn tree(dir: &Path, base: &Path, files: &mut BTreeMap<PathBuf, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            tree(&path, base, files);
        } else {
            files.insert(path.strip_prefix(base).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
        }
    }
}

fn determinism() -> Result<String, String> {
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        run_pipeline(dir.path())?;
        let mut files = BTreeMap::new();
        tree(dir.path(), dir.path(), &mut files);
        snapshots.push(files);
    }
    let (a, b) = (&snapshots[0], &snapshots[1]);
    ensure(a.keys().eq(b.keys()), || "the two runs wrote different files".into())?;
    for (path, bytes) in a {
        ensure(&b[path] == bytes, || format!("{} differs", path.display()))?;
    }
    Ok(format!("{} files byte-identical across two runs", a.len()))
}

fn main() {
    let criteria: [(&str, Option<u64>, Check); 10] = [
        ("similarity suite", Some(5), similarity_suite),
        ("OVL against numeric integration", Some(10), ovl_correctness),
        ("AP against exhaustive exemplar search", Some(60), ap_oracle),
        ("variance decomposition", Some(5), variance_decomposition),
        ("distance metrics", None, distance_metrics),
        ("gradient check", Some(30), gradient_check),
        ("planted nutrient+visual vs visual-only", Some(120), planted_reproduction),
        ("within-cluster vs uniform mistakes", Some(60), better_mistakes),
        ("multi-task trainer", Some(120), multitask_trainer),
        ("CLI determinism", None, determinism),
    ];
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(l)) if elapsed > Duration::from_secs(*l) => Err(format!("took {elapsed:.1?}, limit {l} s")),
            (r, _) => r,
        };
        let (status, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {status} {name}: {detail} [{elapsed:.2?}]", i + 1);
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
