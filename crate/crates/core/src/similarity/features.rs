//! Visual feature rows and their per-category Gaussian fits.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nutrient_data::finish_csv;

/// Stds below this are raised to it so every fitted density is proper.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub category: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryGaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub dim: usize,
    pub categories: BTreeMap<String, CategoryGaussian>,
}

impl FeatureStats {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Shape("feature dimension must be positive".into()));
        }
        for (id, g) in &self.categories {
            if g.mean.len() != self.dim || g.std.len() != self.dim {
                return Err(Error::Shape(format!(
                    "category `{id}` has mean/std of length {}/{}, expected {}",
                    g.mean.len(),
                    g.std.len(),
                    self.dim
                )));
            }
            if g.n == 0 {
                return Err(Error::InsufficientData(format!("category `{id}` has n = 0")));
            }
            if g.std.iter().any(|s| !(s.is_finite() && *s >= 0.0))
                || g.mean.iter().any(|m| !m.is_finite())
            {
                return Err(Error::Validation(format!(
                    "category `{id}` has a non-finite mean or negative std"
                )));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        self.categories.keys().cloned().collect()
    }
}

/// Fits a Gaussian to every feature dimension of every category using the
/// sample mean and the sample (n - 1) standard deviation.
pub fn fit_feature_gaussians(rows: &[FeatureRow]) -> Result<FeatureStats> {
    let Some(first) = rows.first() else {
        return Err(Error::InsufficientData("no feature rows".into()));
    };
    let dim = first.values.len();
    if dim == 0 {
        return Err(Error::Shape("feature rows have no dimensions".into()));
    }
    let mut grouped: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        if r.values.len() != dim {
            return Err(Error::Shape(format!(
                "feature row {i} (`{}`) has dimension {}, expected {dim}",
                r.category,
                r.values.len()
            )));
        }
        grouped.entry(&r.category).or_default().push(&r.values);
    }

    let mut categories = BTreeMap::new();
    for (id, samples) in grouped {
        let n = samples.len();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "category `{id}` has {n} feature sample(s), at least 2 are needed"
            )));
        }
        let mut mean = vec![0.0; dim];
        for s in &samples {
            for (m, v) in mean.iter_mut().zip(s.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut std = vec![0.0; dim];
        for s in &samples {
            for ((acc, v), m) in std.iter_mut().zip(s.iter()).zip(&mean) {
                *acc += (v - m).powi(2);
            }
        }
        std.iter_mut()
            .for_each(|acc| *acc = (*acc / (n - 1) as f64).sqrt().max(STD_FLOOR));
        categories.insert(id.to_string(), CategoryGaussian { mean, std, n });
    }
    Ok(FeatureStats { dim, categories })
}

/// Image counts implied by a features file (one row per image).
pub fn counts_from_features(rows: &[FeatureRow]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for r in rows {
        *counts.entry(r.category.clone()).or_insert(0) += 1;
    }
    counts
}

pub fn parse_features_csv(path: impl AsRef<Path>) -> Result<Vec<FeatureRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_features_csv_from(file)
}

/// Reads `category,f0,f1,...,f{d-1}` rows.
pub fn parse_features_csv_from<R: Read>(reader: R) -> Result<Vec<FeatureRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = records.next().transpose()?.ok_or_else(|| Error::Format {
        row: 1,
        message: "missing header `category,f0,...`".into(),
    })?;
    let ok_header = header.len() >= 2
        && &header[0] == "category"
        && header.iter().skip(1).enumerate().all(|(i, h)| h == format!("f{i}"));
    if !ok_header {
        return Err(Error::Format {
            row: 1,
            message: format!(
                "unexpected features header `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let dim = header.len() - 1;

    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec?;
        if rec.len() != dim + 1 {
            return Err(Error::Shape(format!(
                "row {row}: expected {dim} feature values, found {}",
                rec.len().saturating_sub(1)
            )));
        }
        let values = rec
            .iter()
            .skip(1)
            .enumerate()
            .map(|(k, f)| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        row,
                        column: format!("f{k}"),
                        value: f.to_string(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(FeatureRow {
            category: rec[0].to_string(),
            values,
        });
    }
    Ok(rows)
}

pub fn write_features_csv(rows: &[FeatureRow]) -> Result<String> {
    let dim = rows.first().map_or(0, |r| r.values.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["category".to_string()];
    header.extend((0..dim).map(|k| format!("f{k}")));
    w.write_record(&header)?;
    for r in rows {
        if r.values.len() != dim {
            return Err(Error::Shape("ragged feature rows".into()));
        }
        let mut rec = vec![r.category.clone()];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    finish_csv(w)
}
