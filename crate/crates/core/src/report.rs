//! Comparison of candidate runs against a flat baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{
    accuracy, aggregate_runs, mae_entry, relative_error_reduction, Conventions, EvaluationReport, MaeScope,
    DistanceReport, PredictionLog, RelativeError, RunAggregate, VarianceConvention, VarianceReport,
};
use crate::nutrient_data::{CategoryTable, Nutrient};

/// Accuracy and per-nutrient MAE of one prediction log.
pub fn prediction_report(
    log: &PredictionLog,
    table: &CategoryTable,
    nutrients: &[Nutrient],
    table_digest: Option<String>,
) -> Result<EvaluationReport> {
    log.validate(table)?;
    let mae = nutrients
        .iter()
        .map(|&n| Ok((n, mae_entry(log, table, n)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(EvaluationReport {
        accuracy: Some(accuracy(log)?),
        mae,
        variances: None,
        distances: None,
        conventions: Conventions::new(VarianceConvention::Weighted, MaeScope::All),
        table_digest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub name: String,
    pub accuracy: Option<f64>,
    pub mae: BTreeMap<Nutrient, f64>,
    /// Against the baseline; absent when the baseline MAE is 0.
    pub reduction: BTreeMap<Nutrient, Option<RelativeError>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variances: Option<VarianceReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distances: Option<DistanceReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyAggregate {
    pub mean: f64,
    /// Lowest accuracy across runs.
    pub worst: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NutrientSummary {
    pub baseline: f64,
    pub mae: RunAggregate,
    pub mean_reduction: Option<RelativeError>,
    pub worst_reduction: Option<RelativeError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub mae_scope: MaeScope,
    pub baseline: RunRow,
    pub runs: Vec<RunRow>,
    pub summary: BTreeMap<Nutrient, NutrientSummary>,
    pub accuracy: Option<AccuracyAggregate>,
}

fn scoped_mae(report: &EvaluationReport, nutrient: Nutrient, scope: MaeScope, name: &str) -> Result<f64> {
    let entry = report
        .mae
        .get(&nutrient)
        .ok_or_else(|| Error::Alignment(format!("run `{name}` has no MAE for {nutrient}")))?;
    match scope {
        MaeScope::All => Ok(entry.all),
        MaeScope::MistakesOnly => entry
            .mistakes_only
            .ok_or_else(|| Error::UndefinedMetric(format!("run `{name}` has no mistakes to score"))),
    }
}

fn reduction(candidate: f64, baseline: f64) -> Result<Option<RelativeError>> {
    if baseline == 0.0 {
        return Ok(None);
    }
    relative_error_reduction(candidate, baseline).map(Some)
}

/// MAE per nutrient per run, mean and worst case across runs, and relative
/// error reduction against the baseline. Runs must share the baseline's
/// category table digest when both carry one.
pub fn compare_runs(
    baseline: (&str, &EvaluationReport),
    candidates: &[(String, EvaluationReport)],
    scope: MaeScope,
) -> Result<ComparisonReport> {
    if candidates.is_empty() {
        return Err(Error::Config("at least one candidate run is required".into()));
    }
    let (base_name, base) = baseline;
    let nutrients: Vec<Nutrient> = base.mae.keys().copied().collect();
    if nutrients.is_empty() {
        return Err(Error::Validation(format!("baseline `{base_name}` has no MAE entries")));
    }
    for (name, run) in candidates {
        if let (Some(a), Some(b)) = (&base.table_digest, &run.table_digest) {
            if a != b {
                return Err(Error::Alignment(format!(
                    "run `{name}` was scored on a different category table than baseline `{base_name}`"
                )));
            }
        }
    }

    let base_mae = nutrients
        .iter()
        .map(|&n| Ok((n, scoped_mae(base, n, scope, base_name)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let row = |name: &str, run: &EvaluationReport| -> Result<RunRow> {
        let mut mae = BTreeMap::new();
        let mut red = BTreeMap::new();
        for &n in &nutrients {
            let v = scoped_mae(run, n, scope, name)?;
            red.insert(n, reduction(v, base_mae[&n])?);
            mae.insert(n, v);
        }
        Ok(RunRow {
            name: name.to_string(),
            accuracy: run.accuracy,
            mae,
            reduction: red,
            variances: run.variances.clone(),
            distances: run.distances,
        })
    };

    let baseline_row = row(base_name, base)?;
    let runs = candidates
        .iter()
        .map(|(name, run)| row(name, run))
        .collect::<Result<Vec<_>>>()?;

    let mut summary = BTreeMap::new();
    for &n in &nutrients {
        let values: Vec<f64> = runs.iter().map(|r| r.mae[&n]).collect();
        let agg = aggregate_runs(&values)?;
        summary.insert(
            n,
            NutrientSummary {
                baseline: base_mae[&n],
                mae: agg,
                mean_reduction: reduction(agg.mean, base_mae[&n])?,
                worst_reduction: reduction(agg.worst, base_mae[&n])?,
            },
        );
    }

    let accuracies: Option<Vec<f64>> = runs.iter().map(|r| r.accuracy).collect();
    let accuracy = accuracies.map(|a| AccuracyAggregate {
        mean: a.iter().sum::<f64>() / a.len() as f64,
        worst: a.iter().copied().fold(f64::INFINITY, f64::min),
    });

    Ok(ComparisonReport {
        mae_scope: scope,
        baseline: baseline_row,
        runs,
        summary,
        accuracy,
    })
}
