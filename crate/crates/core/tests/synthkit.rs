use nutricluster_core::clustering::{ApConfig, Hierarchy};
use nutricluster_core::evaluation::{nutrient_mae, MaeScope};
use nutricluster_core::nutrient_data::{aggregate_categories, parse_counts_csv, parse_nutrient_csv, Nutrient};
use nutricluster_core::pipeline::{cluster, selected_similarity, visual_similarity, DomainSelection};
use nutricluster_core::similarity::{parse_features_csv, OvlAggregation};
use nutricluster_core::synthkit::*;

#[test]
fn planted_groups_recovered_across_seeds() {
    for seed in 0..20 {
        for groups in [2, 4] {
            let d = generate_planted_dataset(&PlantedConfig {
                groups,
                seed,
                ..PlantedConfig::default()
            })
            .unwrap();
            let sv = visual_similarity(&d.features, OvlAggregation::Mean).unwrap();
            let sim = selected_similarity(&d.table, Some(&sv), &DomainSelection::nutrients(vec![Nutrient::Energy]))
                .unwrap();
            let h = cluster(&sim, &ApConfig { seed, ..ApConfig::default() }).unwrap();
            assert_eq!(h.partition(), d.ground_truth.partition(), "seed {seed}, {groups} groups");
        }
    }
}

#[test]
fn written_files_parse_back() {
    let d = generate_planted_dataset(&PlantedConfig {
        seed: 4,
        ..PlantedConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    d.write_to(dir.path()).unwrap();
    let items = parse_nutrient_csv(dir.path().join("nutrients.csv")).unwrap();
    let counts = parse_counts_csv(dir.path().join("counts.csv")).unwrap();
    assert_eq!(aggregate_categories(&items, &counts).unwrap(), d.table);
    assert_eq!(parse_features_csv(dir.path().join("features.csv")).unwrap(), d.features);
    let gt: Hierarchy =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ground_truth.json")).unwrap()).unwrap();
    assert_eq!(gt, d.ground_truth);

    let again = tempfile::tempdir().unwrap();
    d.write_to(again.path()).unwrap();
    for name in ["nutrients.csv", "counts.csv", "features.csv", "ground_truth.json"] {
        assert_eq!(
            std::fs::read(dir.path().join(name)).unwrap(),
            std::fs::read(again.path().join(name)).unwrap()
        );
    }
}

#[test]
fn within_cluster_mistakes_cost_less() {
    let mut wins = 0;
    for seed in 0..20 {
        let d = generate_planted_dataset(&PlantedConfig {
            seed,
            ..PlantedConfig::default()
        })
        .unwrap();
        let mae = |mode| {
            let log = generate_confusion_log(&d.table, &d.ground_truth, 0.3, mode, seed).unwrap();
            nutrient_mae(&log, &d.table, Nutrient::Energy, MaeScope::All).unwrap()
        };
        if mae(ConfusionMode::WithinCluster) <= mae(ConfusionMode::Uniform) {
            wins += 1;
        }
    }
    assert_eq!(wins, 20);
}

#[test]
fn confusion_logs_are_seeded() {
    let d = generate_planted_dataset(&PlantedConfig::default()).unwrap();
    let a = generate_confusion_log(&d.table, &d.ground_truth, 0.4, ConfusionMode::Uniform, 8).unwrap();
    let b = generate_confusion_log(&d.table, &d.ground_truth, 0.4, ConfusionMode::Uniform, 8).unwrap();
    assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
}
