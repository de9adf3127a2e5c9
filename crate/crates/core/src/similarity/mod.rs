//! Nutrient-domain, visual-domain and combined similarity matrices.
//!
//! Per nutrient, categories are compared with an RBF kernel scaled by the
//! inter-class standard deviation. Nutrient scores are fused with a weighted
//! harmonic mean, visual similarity is the Gaussian overlap of per-dimension
//! feature fits, and the two domains are fused with an equally weighted
//! harmonic mean.

mod features;
mod ovl;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nutrient_data::{CategoryTable, Nutrient, NutrientStats};

pub use features::{
    counts_from_features, fit_feature_gaussians, parse_features_csv, parse_features_csv_from,
    write_features_csv, CategoryGaussian, FeatureRow, FeatureStats, STD_FLOOR,
};
pub use ovl::{gaussian_ovl, std_normal_cdf};

/// Lower clamp for RBF scores.
pub const NUTRIENT_CLAMP: f64 = 1e-12;
/// Lower clamp for visual overlap scores.
pub const VISUAL_CLAMP: f64 = 1e-6;

pub fn rbf_similarity(x1: f64, x2: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("RBF bandwidth must be positive, got {sigma}")));
    }
    let d = x1 - x2;
    Ok((-(d * d) / (2.0 * sigma * sigma)).exp().clamp(NUTRIENT_CLAMP, 1.0))
}

/// `Σ w_i / Σ (w_i / s_i)`.
pub fn weighted_harmonic_mean(scores: &[f64], weights: &[f64]) -> Result<f64> {
    if scores.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} weights",
            scores.len(),
            weights.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Shape("harmonic mean of an empty list".into()));
    }
    if let Some(s) = scores.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::Domain(format!("harmonic mean needs positive scores, got {s}")));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::Domain(format!("harmonic mean needs positive weights, got {w}")));
    }
    let num: f64 = weights.iter().sum();
    let den: f64 = scores.iter().zip(weights).map(|(s, w)| w / s).sum();
    // exact min/max bounds despite rounding
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((num / den).clamp(lo, hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub nutrients: Vec<Nutrient>,
    pub weights: Vec<f64>,
    pub allow_energy_mix: bool,
}

impl SimilarityConfig {
    /// Unit weights, energy mixing disallowed.
    pub fn new(nutrients: Vec<Nutrient>) -> Self {
        let weights = vec![1.0; nutrients.len()];
        Self {
            nutrients,
            weights,
            allow_energy_mix: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nutrients.is_empty() {
            return Err(Error::Config("nutrient selection is empty".into()));
        }
        if self.weights.len() != self.nutrients.len() {
            return Err(Error::Config(format!(
                "{} weights for {} nutrients",
                self.weights.len(),
                self.nutrients.len()
            )));
        }
        if self.weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Config("nutrient weights must be positive".into()));
        }
        let mut seen = self.nutrients.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.nutrients.len() {
            return Err(Error::Config("nutrient selected twice".into()));
        }
        if !self.allow_energy_mix
            && self.nutrients.len() > 1
            && self.nutrients.contains(&Nutrient::Energy)
        {
            return Err(Error::Config(
                "energy is not a nutrient and is not combined with carbohydrate, fat or protein; \
                 select it alone or allow energy mixing explicitly"
                    .into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub domains: Vec<String>,
    pub weights: BTreeMap<String, f64>,
    pub clamps: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ovl_aggregation: Option<OvlAggregation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    /// Checks shape, exact symmetry, unit diagonal and the (0, 1] range.
    pub fn validate(&self) -> Result<()> {
        let k = self.labels.len();
        if self.values.len() != k || self.values.iter().any(|r| r.len() != k) {
            return Err(Error::Shape(format!("similarity matrix is not {k}x{k}")));
        }
        for i in 0..k {
            if self.values[i][i] != 1.0 {
                return Err(Error::Validation(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..k {
                let v = self.values[i][j];
                if !(v > 0.0 && v <= 1.0) {
                    return Err(Error::Validation(format!("entry ({i},{j}) = {v} outside (0, 1]")));
                }
                if v != self.values[j][i] {
                    return Err(Error::Validation(format!("entry ({i},{j}) is not symmetric")));
                }
            }
        }
        Ok(())
    }
}

/// Fills a symmetric matrix with unit diagonal, evaluating each unordered
/// pair exactly once. Pairs are evaluated in parallel; every entry depends
/// only on its own pair, so the result equals sequential evaluation.
pub(crate) fn pairwise_symmetric<F>(k: usize, f: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(usize, usize) -> Result<f64> + Sync,
{
    let pairs: Vec<(usize, usize)> = (0..k)
        .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
        .collect();
    let upper = pairs
        .par_iter()
        .map(|&(i, j)| f(i, j))
        .collect::<Result<Vec<f64>>>()?;
    let mut values = vec![vec![0.0; k]; k];
    for (i, row) in values.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for (&(i, j), v) in pairs.iter().zip(upper) {
        values[i][j] = v;
        values[j][i] = v;
    }
    Ok(values)
}

pub fn nutrient_similarity_matrix(
    table: &CategoryTable,
    stats: &NutrientStats,
    config: &SimilarityConfig,
) -> Result<SimilarityMatrix> {
    config.validate()?;
    let sigmas = config
        .nutrients
        .iter()
        .map(|&n| {
            let s = stats.sigma(n);
            if s > 0.0 && s.is_finite() {
                Ok(s)
            } else {
                Err(Error::Degenerate(format!(
                    "inter-class std of {n} is {s}; it cannot scale a similarity"
                )))
            }
        })
        .collect::<Result<Vec<f64>>>()?;

    let values = pairwise_symmetric(table.len(), |i, j| {
        let scores = config
            .nutrients
            .iter()
            .zip(&sigmas)
            .map(|(&n, &s)| rbf_similarity(table.value(i, n), table.value(j, n), s))
            .collect::<Result<Vec<f64>>>()?;
        weighted_harmonic_mean(&scores, &config.weights)
    })?;

    let provenance = Provenance {
        domains: config.nutrients.iter().map(|n| n.name().to_string()).collect(),
        weights: config
            .nutrients
            .iter()
            .zip(&config.weights)
            .map(|(n, w)| (n.name().to_string(), *w))
            .collect(),
        clamps: [("nutrient".to_string(), NUTRIENT_CLAMP)].into_iter().collect(),
        ovl_aggregation: None,
    };
    Ok(SimilarityMatrix {
        labels: table.labels(),
        values,
        provenance,
    })
}

/// How per-dimension overlaps are reduced to one visual score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OvlAggregation {
    #[default]
    Mean,
    GeometricMean,
}

impl std::str::FromStr for OvlAggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "geometric_mean" | "geometric-mean" => Ok(Self::GeometricMean),
            _ => Err(Error::Config(format!("unknown OVL aggregation `{s}`"))),
        }
    }
}

pub fn visual_similarity_matrix(stats: &FeatureStats) -> Result<SimilarityMatrix> {
    visual_similarity_matrix_with(stats, OvlAggregation::Mean)
}

pub fn visual_similarity_matrix_with(
    stats: &FeatureStats,
    aggregation: OvlAggregation,
) -> Result<SimilarityMatrix> {
    stats.validate()?;
    let gaussians: Vec<&CategoryGaussian> = stats.categories.values().collect();
    let d = stats.dim as f64;
    let values = pairwise_symmetric(gaussians.len(), |i, j| {
        let (a, b) = (gaussians[i], gaussians[j]);
        let mut acc = 0.0;
        for k in 0..stats.dim {
            let ovl = gaussian_ovl(
                a.mean[k],
                a.std[k].max(STD_FLOOR),
                b.mean[k],
                b.std[k].max(STD_FLOOR),
            )?;
            match aggregation {
                OvlAggregation::Mean => acc += ovl,
                OvlAggregation::GeometricMean => acc += ovl.max(f64::MIN_POSITIVE).ln(),
            }
        }
        let score = match aggregation {
            OvlAggregation::Mean => acc / d,
            OvlAggregation::GeometricMean => (acc / d).exp(),
        };
        Ok(score.clamp(VISUAL_CLAMP, 1.0))
    })?;
    Ok(SimilarityMatrix {
        labels: stats.labels(),
        values,
        provenance: Provenance {
            domains: vec!["visual".into()],
            weights: BTreeMap::new(),
            clamps: [("visual".to_string(), VISUAL_CLAMP)].into_iter().collect(),
            ovl_aggregation: Some(aggregation),
        },
    })
}

/// Entrywise `2 S_V S_N / (S_V + S_N)`.
pub fn combine_similarity(sv: &SimilarityMatrix, sn: &SimilarityMatrix) -> Result<SimilarityMatrix> {
    if sv.labels != sn.labels {
        return Err(Error::Alignment(format!(
            "similarity matrices cover different categories ({} vs {} labels, or different order)",
            sv.labels.len(),
            sn.labels.len()
        )));
    }
    sv.validate()?;
    sn.validate()?;
    let values = pairwise_symmetric(sv.len(), |i, j| {
        let (a, b) = (sv.get(i, j), sn.get(i, j));
        Ok((2.0 * a * b / (a + b)).clamp(a.min(b), a.max(b)))
    })?;

    // nutrient domains first, then visual, so run names read like `C+F+V`
    let mut provenance = Provenance::default();
    for p in [&sn.provenance, &sv.provenance] {
        for d in &p.domains {
            if !provenance.domains.contains(d) {
                provenance.domains.push(d.clone());
            }
        }
        provenance.weights.extend(p.weights.clone());
        provenance.clamps.extend(p.clamps.clone());
        provenance.ovl_aggregation = provenance.ovl_aggregation.or(p.ovl_aggregation);
    }
    Ok(SimilarityMatrix {
        labels: sv.labels.clone(),
        values,
        provenance,
    })
}
