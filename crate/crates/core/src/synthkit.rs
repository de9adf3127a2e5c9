//! Seeded generators for planted-cluster datasets and confusion-model
//! prediction logs.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::clustering::Hierarchy;
use crate::error::{Error, Result};
use crate::evaluation::{PredictionLog, PredictionRow};
use crate::nutrient_data::{
    aggregate_categories, write_counts_csv, write_nutrient_csv, CategoryTable, FoodItem, NutrientVector,
    NUTRIENT_COUNT,
};
use crate::similarity::{write_features_csv, FeatureRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub groups: usize,
    pub per_group: usize,
    pub dim: usize,
    /// Std of category feature means around their group center.
    pub feature_spread: f64,
    /// Std of group feature centers around the origin.
    pub separation: f64,
    /// Std of per-image features around the category mean.
    pub sample_noise: f64,
    /// Number of distinct visual group centers. Nutrient group `g` looks
    /// like visual group `g % visual_groups`; `None` means one per group.
    pub visual_groups: Option<usize>,
    /// Nutrient value of group 0.
    pub nutrient_base: NutrientVector,
    /// Offset between consecutive group nutrient centers.
    pub nutrient_step: NutrientVector,
    /// Std of category nutrient values around the group center.
    pub nutrient_jitter: NutrientVector,
    pub items_per_category: usize,
    pub images_per_category: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            groups: 4,
            per_group: 5,
            dim: 16,
            feature_spread: 1.0,
            separation: 10.0,
            sample_noise: 1.0,
            visual_groups: None,
            nutrient_base: [80.0, 5.0, 2.0, 2.0],
            nutrient_step: [120.0, 15.0, 6.0, 5.0],
            nutrient_jitter: [8.0, 1.0, 0.4, 0.35],
            items_per_category: 4,
            images_per_category: 20,
            seed: 0,
        }
    }
}

impl PlantedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.groups < 2 {
            return Err(Error::Config(format!("need at least 2 planted groups, got {}", self.groups)));
        }
        if self.per_group == 0 || self.dim == 0 || self.items_per_category == 0 {
            return Err(Error::Config("per-group, dimension and item counts must be at least 1".into()));
        }
        if self.images_per_category < 2 {
            return Err(Error::Config("need at least 2 images per category to fit a spread".into()));
        }
        if let Some(v) = self.visual_groups {
            if v == 0 || v > self.groups {
                return Err(Error::Config(format!("visual groups must be in 1..={}", self.groups)));
            }
        }
        let positive = [self.feature_spread, self.separation, self.sample_noise];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("feature spread, separation and noise must be positive".into()));
        }
        if self.separation <= self.feature_spread {
            return Err(Error::Config("separation must exceed the within-group spread".into()));
        }
        let nutrients = self.nutrient_base.iter().chain(&self.nutrient_step).chain(&self.nutrient_jitter);
        if nutrients.clone().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("nutrient base, step and jitter must be finite and non-negative".into()));
        }
        Ok(())
    }

    fn visual_group_count(&self) -> usize {
        self.visual_groups.unwrap_or(self.groups)
    }
}

pub fn category_id(group: usize, index: usize) -> String {
    format!("g{group}_c{index:02}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedDataset {
    pub items: Vec<FoodItem>,
    pub counts: BTreeMap<String, u64>,
    pub table: CategoryTable,
    pub features: Vec<FeatureRow>,
    /// Nutrient groups.
    pub ground_truth: Hierarchy,
    /// Groups sharing a visual center.
    pub visual_truth: Hierarchy,
}

impl PlantedDataset {
    pub fn nutrient_csv(&self) -> Result<String> {
        write_nutrient_csv(&self.items)
    }

    pub fn counts_csv(&self) -> Result<String> {
        write_counts_csv(&self.counts)
    }

    pub fn features_csv(&self) -> Result<String> {
        write_features_csv(&self.features)
    }

    pub fn ground_truth_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.ground_truth)?)
    }

    /// Writes `nutrients.csv`, `counts.csv`, `features.csv` and
    /// `ground_truth.json` into `dir`, creating it if needed.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("nutrients.csv", self.nutrient_csv()?),
            ("counts.csv", self.counts_csv()?),
            ("features.csv", self.features_csv()?),
            ("ground_truth.json", self.ground_truth_json()?),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("std validated")
}

pub fn generate_planted_dataset(config: &PlantedConfig) -> Result<PlantedDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let v = config.visual_group_count();

    let centers: Vec<Vec<f64>> = (0..v)
        .map(|_| (0..config.dim).map(|_| normal(config.separation).sample(&mut rng)).collect())
        .collect();

    let mut items = Vec::new();
    let mut counts = BTreeMap::new();
    let mut features = Vec::new();
    let mut groups = vec![Vec::new(); config.groups];
    let mut visual = vec![Vec::new(); v];

    for g in 0..config.groups {
        for c in 0..config.per_group {
            let id = category_id(g, c);
            groups[g].push(id.clone());
            visual[g % v].push(id.clone());

            let mut value = [0.0; NUTRIENT_COUNT];
            for k in 0..NUTRIENT_COUNT {
                let center = config.nutrient_base[k] + g as f64 * config.nutrient_step[k];
                value[k] = center + jitter(config.nutrient_jitter[k], &mut rng);
            }
            for i in 0..config.items_per_category {
                let mut nutrients = value;
                for k in 0..NUTRIENT_COUNT {
                    nutrients[k] = (nutrients[k] + jitter(config.nutrient_jitter[k], &mut rng)).max(0.0);
                }
                items.push(FoodItem {
                    food_code: format!("{id}_f{i:02}"),
                    category_id: id.clone(),
                    nutrients,
                });
            }

            let mean: Vec<f64> = centers[g % v]
                .iter()
                .map(|x| x + normal(config.feature_spread).sample(&mut rng))
                .collect();
            for _ in 0..config.images_per_category {
                features.push(FeatureRow {
                    category: id.clone(),
                    values: mean
                        .iter()
                        .map(|m| m + normal(config.sample_noise).sample(&mut rng))
                        .collect(),
                });
            }
            counts.insert(id, config.images_per_category as u64);
        }
    }

    let table = aggregate_categories(&items, &counts)?;
    Ok(PlantedDataset {
        items,
        counts,
        table,
        features,
        ground_truth: Hierarchy::from_groups(groups)?,
        visual_truth: Hierarchy::from_groups(visual)?,
    })
}

fn jitter(std: f64, rng: &mut ChaCha8Rng) -> f64 {
    if std == 0.0 {
        0.0
    } else {
        normal(std).sample(rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfusionMode {
    /// Mistakes stay inside the true category's cluster.
    WithinCluster,
    /// Mistakes go to any other category.
    Uniform,
}

impl std::str::FromStr for ConfusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "within_cluster" | "within-cluster" => Ok(Self::WithinCluster),
            "uniform" => Ok(Self::Uniform),
            _ => Err(Error::Config(format!("unknown confusion mode `{s}`"))),
        }
    }
}

/// One row per image of every category, in table order. Each prediction is
/// wrong with probability `error_rate`; a within-cluster mistake for a
/// singleton cluster falls back to the correct label.
pub fn generate_confusion_log(
    table: &CategoryTable,
    hierarchy: &Hierarchy,
    error_rate: f64,
    mode: ConfusionMode,
    seed: u64,
) -> Result<PredictionLog> {
    if !(0.0..=1.0).contains(&error_rate) {
        return Err(Error::Config(format!("error rate must be in [0, 1], got {error_rate}")));
    }
    if table.total_images() == 0 {
        return Err(Error::Degenerate("the table has no image counts to draw predictions for".into()));
    }
    let labels = table.labels();
    hierarchy.validate_against(&labels)?;
    let cluster_of = hierarchy.cluster_of();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();

    for entry in table.entries() {
        let peers: Vec<&String> = match mode {
            ConfusionMode::WithinCluster => hierarchy.clusters[cluster_of[entry.id.as_str()]]
                .members
                .iter()
                .filter(|m| **m != entry.id)
                .collect(),
            ConfusionMode::Uniform => labels.iter().filter(|m| **m != entry.id).collect(),
        };
        for i in 0..entry.image_count {
            let wrong = rng.random::<f64>() < error_rate;
            let predicted = if wrong && !peers.is_empty() {
                peers[rng.random_range(0..peers.len())].clone()
            } else {
                entry.id.clone()
            };
            rows.push(PredictionRow {
                sample_id: format!("{}_{i:05}", entry.id),
                true_category: entry.id.clone(),
                predicted_category: predicted,
            });
        }
    }
    Ok(PredictionLog { rows })
}
