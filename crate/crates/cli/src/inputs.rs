use std::collections::BTreeMap;
use std::path::Path;

use nutricluster_core::evaluation::PredictionLog;
use nutricluster_core::nutrient_data::{
    aggregate_categories, inter_class_std, parse_counts_csv_from, parse_nutrient_csv_from, CategoryTable,
    NutrientStats,
};
use nutricluster_core::similarity::{counts_from_features, parse_features_csv_from, FeatureRow};
use nutricluster_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::TableSource;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Table JSON written by `ingest`.
#[derive(Debug, Serialize, Deserialize)]
pub struct TableFile {
    pub table: CategoryTable,
    pub stats: NutrientStats,
}

impl TableFile {
    pub fn new(table: CategoryTable) -> Result<Self> {
        let stats = inter_class_std(&table)?;
        Ok(Self { table, stats })
    }
}

/// Content hash of a table, used to check that metric files refer to the
/// same categories.
pub fn table_digest(table: &CategoryTable) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(table)?))
}

/// Reads input files and remembers a content digest of each.
#[derive(Debug, Default)]
pub struct Inputs {
    pub digests: BTreeMap<String, String>,
}

impl Inputs {
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.digests.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn json<T: DeserializeOwned>(&mut self, path: &Path) -> Result<T> {
        let bytes = self.read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Format {
            row: e.line(),
            message: format!("{}: {e}", path.display()),
        })
    }

    pub fn features(&mut self, path: &Path) -> Result<Vec<FeatureRow>> {
        let bytes = self.read(path)?;
        parse_features_csv_from(bytes.as_slice())
    }

    pub fn predictions(&mut self, path: &Path) -> Result<PredictionLog> {
        let bytes = self.read(path)?;
        PredictionLog::from_reader(bytes.as_slice())
    }

    /// Loads the category table. Image counts come from `--counts` if given,
    /// else from the feature rows, else from the table file itself.
    pub fn table(&mut self, source: &TableSource, features: Option<&[FeatureRow]>) -> Result<CategoryTable> {
        let is_json = source.table.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let counts: Option<BTreeMap<String, u64>> = match (&source.counts, features) {
            (Some(path), _) => {
                let bytes = self.read(path)?;
                Some(parse_counts_csv_from(bytes.as_slice())?)
            }
            (None, Some(rows)) => Some(counts_from_features(rows)),
            (None, None) => None,
        };
        let table = if is_json {
            let file: TableFile = self.json(&source.table)?;
            // re-validate whatever was deserialized
            CategoryTable::new(file.table.entries().to_vec())?
        } else {
            let bytes = self.read(&source.table)?;
            let items = parse_nutrient_csv_from(bytes.as_slice())?;
            aggregate_categories(&items, &BTreeMap::new())?
        };
        Ok(match counts {
            Some(c) => table.with_image_counts(&c),
            None => table,
        })
    }
}
