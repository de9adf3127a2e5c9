//! In-process composition of the stages: similarity, clustering, evaluation.

use serde::{Deserialize, Serialize};

use crate::clustering::{affinity_propagation, build_hierarchy, ApConfig, Hierarchy, HierarchyConfig};
use crate::error::{Error, Result};
use crate::evaluation::{
    cluster_variances, distance_report, visual_distance_matrix, DistanceReport, VarianceConvention, VarianceReport,
};
use crate::nutrient_data::{inter_class_std, CategoryTable, Nutrient};
use crate::similarity::{
    combine_similarity, fit_feature_gaussians, nutrient_similarity_matrix, visual_similarity_matrix_with, FeatureRow,
    OvlAggregation, SimilarityConfig, SimilarityMatrix,
};

/// Which domains feed the clustering similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSelection {
    pub nutrients: Vec<Nutrient>,
    /// Per-nutrient weights; unit weights when absent.
    pub weights: Option<Vec<f64>>,
    pub visual: bool,
    pub allow_energy_mix: bool,
    pub ovl_aggregation: OvlAggregation,
}

impl DomainSelection {
    pub fn nutrients(nutrients: Vec<Nutrient>) -> Self {
        Self {
            nutrients,
            weights: None,
            visual: true,
            allow_energy_mix: false,
            ovl_aggregation: OvlAggregation::Mean,
        }
    }

    pub fn visual_only() -> Self {
        Self::nutrients(Vec::new())
    }

    /// Run name in letter codes, e.g. `C+F+V`.
    pub fn name(&self) -> String {
        let mut parts: Vec<String> = self.nutrients.iter().map(|n| n.code().to_string()).collect();
        if self.visual {
            parts.push("V".into());
        }
        parts.join("+")
    }
}

pub fn visual_similarity(rows: &[FeatureRow], aggregation: OvlAggregation) -> Result<SimilarityMatrix> {
    visual_similarity_matrix_with(&fit_feature_gaussians(rows)?, aggregation)
}

/// Similarity over the selected domains. The visual matrix must be supplied
/// when `selection.visual` is set.
pub fn selected_similarity(
    table: &CategoryTable,
    visual: Option<&SimilarityMatrix>,
    selection: &DomainSelection,
) -> Result<SimilarityMatrix> {
    let nutrient = if selection.nutrients.is_empty() {
        None
    } else {
        let mut config = SimilarityConfig::new(selection.nutrients.clone());
        config.allow_energy_mix = selection.allow_energy_mix;
        if let Some(w) = &selection.weights {
            config.weights = w.clone();
        }
        config.validate()?;
        Some(nutrient_similarity_matrix(table, &inter_class_std(table)?, &config)?)
    };
    match (nutrient, selection.visual) {
        (Some(sn), true) => combine_similarity(need_visual(visual)?, &sn),
        (Some(sn), false) => Ok(sn),
        (None, true) => {
            let sv = need_visual(visual)?;
            if sv.labels != table.labels() {
                return Err(Error::Alignment("feature categories differ from the nutrient table".into()));
            }
            Ok(sv.clone())
        }
        (None, false) => Err(Error::Config("no similarity domain selected".into())),
    }
}

fn need_visual(visual: Option<&SimilarityMatrix>) -> Result<&SimilarityMatrix> {
    visual.ok_or_else(|| Error::Config("visual domain selected but no features were given".into()))
}

/// Affinity Propagation followed by hierarchy construction, with the run
/// settings attached.
pub fn cluster(sim: &SimilarityMatrix, config: &ApConfig) -> Result<Hierarchy> {
    let assignment = affinity_propagation(sim, config)?;
    let mut hierarchy = build_hierarchy(&assignment, &sim.labels)?;
    hierarchy.config = Some(HierarchyConfig::from_run(config, &assignment));
    Ok(hierarchy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEvaluation {
    pub variances: VarianceReport,
    pub distances: Option<DistanceReport>,
}

pub fn evaluate_clusters(
    hierarchy: &Hierarchy,
    table: &CategoryTable,
    visual: Option<&SimilarityMatrix>,
    nutrients: &[Nutrient],
    convention: VarianceConvention,
) -> Result<ClusterEvaluation> {
    let variances = cluster_variances(hierarchy, table, nutrients, convention)?;
    let distances = visual
        .map(|sv| distance_report(hierarchy, &visual_distance_matrix(sv)))
        .transpose()?;
    Ok(ClusterEvaluation { variances, distances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthkit::{generate_planted_dataset, PlantedConfig};

    #[test]
    fn run_names() {
        assert_eq!(DomainSelection::nutrients(vec![Nutrient::Carbohydrate, Nutrient::Fat]).name(), "C+F+V");
        assert_eq!(DomainSelection::visual_only().name(), "V");
    }

    #[test]
    fn energy_mix_is_rejected() {
        let d = generate_planted_dataset(&PlantedConfig::default()).unwrap();
        let sel = DomainSelection {
            visual: false,
            ..DomainSelection::nutrients(vec![Nutrient::Energy, Nutrient::Carbohydrate])
        };
        assert_eq!(selected_similarity(&d.table, None, &sel).unwrap_err().kind(), "config");
    }

    #[test]
    fn separated_groups_are_recovered() {
        let d = generate_planted_dataset(&PlantedConfig {
            groups: 2,
            seed: 5,
            ..PlantedConfig::default()
        })
        .unwrap();
        let sv = visual_similarity(&d.features, OvlAggregation::Mean).unwrap();
        let sim = selected_similarity(&d.table, Some(&sv), &DomainSelection::nutrients(vec![Nutrient::Energy])).unwrap();
        let h = cluster(&sim, &ApConfig::default()).unwrap();
        assert_eq!(h.partition(), d.ground_truth.partition());
        let eval = evaluate_clusters(&h, &d.table, Some(&sv), &[Nutrient::Energy], VarianceConvention::Weighted).unwrap();
        assert!(eval.distances.unwrap().ratio.unwrap() < 1.0);
    }
}
