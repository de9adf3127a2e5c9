//! Cluster quality and prediction-log metrics.
//!
//! Nutrient homogeneity of a hierarchy is measured by splitting the
//! image-weighted nutrient variance into an intra-cluster and an
//! inter-cluster part. Visual compactness uses distances `1 - S_V`: the worst
//! (largest) mean within-cluster distance against the mean distance between
//! cluster exemplars. Prediction logs are scored by accuracy and by the mean
//! absolute nutrient error between predicted and true categories.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::Hierarchy;
use crate::error::{Error, Result};
use crate::nutrient_data::{finish_csv, CategoryTable, Nutrient};
use crate::similarity::SimilarityMatrix;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceConvention {
    /// Every category term weighted by its image count; cluster means image
    /// weighted. Intra + inter equals the total image-weighted variance.
    #[default]
    Weighted,
    /// One unweighted term per category and unweighted cluster means, still
    /// normalised by the total image count. Does not decompose.
    Literal,
}

impl std::str::FromStr for VarianceConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(Self::Weighted),
            "literal" => Ok(Self::Literal),
            _ => Err(Error::Config(format!("unknown variance convention `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEntry {
    pub intra: f64,
    pub inter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub convention: VarianceConvention,
    pub nutrients: BTreeMap<Nutrient, VarianceEntry>,
}

/// Resolves every cluster member to its row in `labels`.
fn member_indices(hierarchy: &Hierarchy, labels: &[String]) -> Result<Vec<Vec<usize>>> {
    let index: HashMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    hierarchy
        .clusters
        .iter()
        .map(|c| {
            c.members
                .iter()
                .map(|m| {
                    index.get(m.as_str()).copied().ok_or_else(|| {
                        Error::Alignment(format!("category `{m}` is not in the matrix or table"))
                    })
                })
                .collect()
        })
        .collect()
}

/// Image-weighted population variance of one nutrient over all images.
pub fn total_variance(table: &CategoryTable, nutrient: Nutrient) -> Result<f64> {
    let n = table.total_images();
    if n == 0 {
        return Err(Error::Degenerate("total image count is 0".into()));
    }
    let n = n as f64;
    let e = table.entries();
    let mean = e
        .iter()
        .map(|c| c.image_count as f64 * c.nutrients[nutrient.index()])
        .sum::<f64>()
        / n;
    Ok(e.iter()
        .map(|c| c.image_count as f64 * (c.nutrients[nutrient.index()] - mean).powi(2))
        .sum::<f64>()
        / n)
}

pub fn cluster_variances(
    hierarchy: &Hierarchy,
    table: &CategoryTable,
    nutrients: &[Nutrient],
    convention: VarianceConvention,
) -> Result<VarianceReport> {
    hierarchy.validate_against(&table.labels())?;
    let total_images = table.total_images();
    if total_images == 0 {
        return Err(Error::Degenerate("total image count is 0".into()));
    }
    let n_total = total_images as f64;
    let groups = member_indices(hierarchy, &table.labels())?;
    let counts: Vec<f64> = table.entries().iter().map(|c| c.image_count as f64).collect();

    let mut report = VarianceReport {
        convention,
        nutrients: BTreeMap::new(),
    };
    for &nutrient in nutrients {
        let x = table.values(nutrient);
        let global_mean = x.iter().zip(&counts).map(|(v, n)| v * n).sum::<f64>() / n_total;
        let (mut intra, mut inter) = (0.0, 0.0);
        for g in &groups {
            let images: f64 = g.iter().map(|&j| counts[j]).sum();
            let cluster_mean = match convention {
                VarianceConvention::Weighted => {
                    if images == 0.0 {
                        continue;
                    }
                    g.iter().map(|&j| counts[j] * x[j]).sum::<f64>() / images
                }
                VarianceConvention::Literal => g.iter().map(|&j| x[j]).sum::<f64>() / g.len() as f64,
            };
            intra += g
                .iter()
                .map(|&j| {
                    let w = match convention {
                        VarianceConvention::Weighted => counts[j],
                        VarianceConvention::Literal => 1.0,
                    };
                    w * (x[j] - cluster_mean).powi(2)
                })
                .sum::<f64>();
            inter += images * (cluster_mean - global_mean).powi(2);
        }
        report.nutrients.insert(
            nutrient,
            VarianceEntry {
                intra: intra / n_total,
                inter: inter / n_total,
            },
        );
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

/// `1 - S_V` entrywise, with an exact zero diagonal.
pub fn visual_distance_matrix(sv: &SimilarityMatrix) -> DistanceMatrix {
    let values = sv
        .values
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, s)| if i == j { 0.0 } else { 1.0 - s })
                .collect()
        })
        .collect();
    DistanceMatrix {
        labels: sv.labels.clone(),
        values,
    }
}

fn mean_pairwise(indices: &[usize], dist: &DistanceMatrix) -> f64 {
    let n = indices.len();
    let mut acc = 0.0;
    for a in 0..n {
        for b in a + 1..n {
            acc += dist.values[indices[a]][indices[b]];
        }
    }
    2.0 * acc / (n * (n - 1)) as f64
}

/// Largest mean pairwise distance inside any cluster with two or more
/// members. Singleton clusters are skipped.
pub fn intra_cluster_distance(hierarchy: &Hierarchy, dist: &DistanceMatrix) -> Result<f64> {
    let groups = member_indices(hierarchy, &dist.labels)?;
    groups
        .iter()
        .filter(|g| g.len() >= 2)
        .map(|g| mean_pairwise(g, dist))
        .reduce(f64::max)
        .ok_or_else(|| {
            Error::UndefinedMetric("intra-cluster distance needs a cluster with at least 2 members".into())
        })
}

/// Mean pairwise distance between cluster exemplars.
pub fn inter_cluster_distance(hierarchy: &Hierarchy, dist: &DistanceMatrix) -> Result<f64> {
    if hierarchy.clusters.len() < 2 {
        return Err(Error::UndefinedMetric(
            "inter-cluster distance needs at least 2 clusters".into(),
        ));
    }
    let index: HashMap<&str, usize> = dist
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let exemplars = hierarchy
        .clusters
        .iter()
        .map(|c| {
            index
                .get(c.exemplar.as_str())
                .copied()
                .ok_or_else(|| Error::Alignment(format!("exemplar `{}` not in distance matrix", c.exemplar)))
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(mean_pairwise(&exemplars, dist))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub intra: Option<f64>,
    pub inter: Option<f64>,
    pub ratio: Option<f64>,
}

/// Both distances plus their ratio; undefined metrics come back as `None`.
pub fn distance_report(hierarchy: &Hierarchy, dist: &DistanceMatrix) -> Result<DistanceReport> {
    let defined = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    };
    let intra = defined(intra_cluster_distance(hierarchy, dist))?;
    let inter = defined(inter_cluster_distance(hierarchy, dist))?;
    let ratio = match (intra, inter) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };
    Ok(DistanceReport { intra, inter, ratio })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub sample_id: String,
    pub true_category: String,
    pub predicted_category: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionLog {
    pub rows: Vec<PredictionRow>,
}

pub const PREDICTIONS_CSV_HEADER: [&str; 3] = ["sample_id", "true_category", "predicted_category"];

impl PredictionLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn validate(&self, table: &CategoryTable) -> Result<()> {
        for r in &self.rows {
            for c in [&r.true_category, &r.predicted_category] {
                if table.index_of(c).is_none() {
                    return Err(Error::Alignment(format!(
                        "sample `{}` names unknown category `{c}`",
                        r.sample_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut records = rdr.records();
        let header = records.next().transpose()?;
        let header_ok = header
            .as_ref()
            .is_some_and(|h| h.iter().eq(PREDICTIONS_CSV_HEADER.iter().copied()));
        if !header_ok {
            return Err(Error::Format {
                row: 1,
                message: format!("expected header `{}`", PREDICTIONS_CSV_HEADER.join(",")),
            });
        }
        let mut rows = Vec::new();
        for (i, rec) in records.enumerate() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(Error::Format {
                    row: i + 2,
                    message: format!("expected 3 columns, found {}", rec.len()),
                });
            }
            rows.push(PredictionRow {
                sample_id: rec[0].to_string(),
                true_category: rec[1].to_string(),
                predicted_category: rec[2].to_string(),
            });
        }
        Ok(Self { rows })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(PREDICTIONS_CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([&r.sample_id, &r.true_category, &r.predicted_category])?;
        }
        finish_csv(w)
    }
}

pub fn accuracy(log: &PredictionLog) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::Degenerate("accuracy of an empty prediction log".into()));
    }
    let correct = log
        .rows
        .iter()
        .filter(|r| r.true_category == r.predicted_category)
        .count();
    Ok(correct as f64 / log.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaeScope {
    /// Every row; correct predictions contribute zero error.
    #[default]
    All,
    MistakesOnly,
}

impl std::str::FromStr for MaeScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "mistakes_only" | "mistakes-only" => Ok(Self::MistakesOnly),
            _ => Err(Error::Config(format!("unknown MAE scope `{s}`"))),
        }
    }
}

/// Mean of `|A_i - Y_i|` where `A_i` and `Y_i` are the category-level values
/// of the predicted and true categories.
pub fn nutrient_mae(
    log: &PredictionLog,
    table: &CategoryTable,
    nutrient: Nutrient,
    scope: MaeScope,
) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::Degenerate("MAE of an empty prediction log".into()));
    }
    let lookup = |c: &str| {
        table
            .index_of(c)
            .map(|i| table.value(i, nutrient))
            .ok_or_else(|| Error::Alignment(format!("unknown category `{c}` in prediction log")))
    };
    let (mut sum, mut rows) = (0.0, 0usize);
    for r in &log.rows {
        let truth = lookup(&r.true_category)?;
        let predicted = lookup(&r.predicted_category)?;
        let mistake = r.true_category != r.predicted_category;
        if scope == MaeScope::All || mistake {
            sum += (predicted - truth).abs();
            rows += 1;
        }
    }
    if rows == 0 {
        return Err(Error::UndefinedMetric("MAE over mistakes with no mistakes in the log".into()));
    }
    Ok(sum / rows as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeError {
    /// `(e_candidate - e_flat) / e_flat`; negative means the candidate is better.
    pub change: f64,
    /// `-change`, the form in which improvements are reported.
    pub reduction: f64,
}

pub fn relative_error_reduction(e_candidate: f64, e_flat: f64) -> Result<RelativeError> {
    if !(e_flat > 0.0 && e_flat.is_finite()) {
        return Err(Error::Domain(format!("baseline error must be positive, got {e_flat}")));
    }
    if !e_candidate.is_finite() {
        return Err(Error::Domain(format!("candidate error must be finite, got {e_candidate}")));
    }
    let change = (e_candidate - e_flat) / e_flat;
    Ok(RelativeError {
        change,
        reduction: -change,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaeEntry {
    pub all: f64,
    pub mistakes_only: Option<f64>,
}

pub fn mae_entry(log: &PredictionLog, table: &CategoryTable, nutrient: Nutrient) -> Result<MaeEntry> {
    let all = nutrient_mae(log, table, nutrient, MaeScope::All)?;
    let mistakes_only = match nutrient_mae(log, table, nutrient, MaeScope::MistakesOnly) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MaeEntry { all, mistakes_only })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub variance: VarianceConvention,
    pub mae_scope: MaeScope,
    pub distance: String,
    pub intra_distance: String,
}

impl Conventions {
    pub fn new(variance: VarianceConvention, mae_scope: MaeScope) -> Self {
        Self {
            variance,
            mae_scope,
            distance: "1 - visual similarity".into(),
            intra_distance: "max over clusters with >= 2 members; singletons skipped".into(),
        }
    }
}

/// Combined metrics document written by the evaluation commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub accuracy: Option<f64>,
    pub mae: BTreeMap<Nutrient, MaeEntry>,
    pub variances: Option<VarianceReport>,
    pub distances: Option<DistanceReport>,
    pub conventions: Conventions,
    /// Content digest of the category table the metrics refer to.
    #[serde(default)]
    pub table_digest: Option<String>,
}

/// Mean and worst case (maximum) of one metric across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub mean: f64,
    pub worst: f64,
}

pub fn aggregate_runs(values: &[f64]) -> Result<RunAggregate> {
    if values.is_empty() {
        return Err(Error::Degenerate("no runs to aggregate".into()));
    }
    Ok(RunAggregate {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        worst: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}
