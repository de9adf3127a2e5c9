//! Food-item nutrient records, category-level aggregation and inter-class
//! scaling statistics.
//!
//! All nutrient values are per 100 g of food. Categories are kept in
//! lexicographic order of their identifiers so that matrix indices are
//! stable across every stage of the pipeline.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUTRIENT_COUNT: usize = 4;

/// Nutrient values in the fixed order energy, carbohydrate, fat, protein.
pub type NutrientVector = [f64; NUTRIENT_COUNT];

pub const NUTRIENT_CSV_HEADER: [&str; 6] = [
    "food_code",
    "category",
    "energy_kcal",
    "carb_g",
    "fat_g",
    "protein_g",
];

pub const COUNTS_CSV_HEADER: [&str; 2] = ["category", "image_count"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nutrient {
    Energy,
    Carbohydrate,
    Fat,
    Protein,
}

impl Nutrient {
    pub const ALL: [Nutrient; NUTRIENT_COUNT] = [
        Nutrient::Energy,
        Nutrient::Carbohydrate,
        Nutrient::Fat,
        Nutrient::Protein,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Nutrient::Energy => "energy",
            Nutrient::Carbohydrate => "carbohydrate",
            Nutrient::Fat => "fat",
            Nutrient::Protein => "protein",
        }
    }

    /// Single-letter run code (E, C, F, P).
    pub fn code(self) -> char {
        match self {
            Nutrient::Energy => 'E',
            Nutrient::Carbohydrate => 'C',
            Nutrient::Fat => 'F',
            Nutrient::Protein => 'P',
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Nutrient::Energy => "kcal",
            _ => "g",
        }
    }
}

impl fmt::Display for Nutrient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Nutrient {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "e" | "energy" => Ok(Nutrient::Energy),
            "c" | "carb" | "carbohydrate" => Ok(Nutrient::Carbohydrate),
            "f" | "fat" => Ok(Nutrient::Fat),
            "p" | "protein" => Ok(Nutrient::Protein),
            other => Err(Error::Config(format!("unknown nutrient `{other}`"))),
        }
    }
}

/// Parses a nutrient list written with letter codes or names, separated by
/// `,` or `+` (for example `C+F`, `E`, `carbohydrate,protein`).
pub fn parse_nutrient_list(s: &str) -> Result<Vec<Nutrient>> {
    let mut out = Vec::new();
    for part in s.split([',', '+']).map(str::trim).filter(|p| !p.is_empty()) {
        let n: Nutrient = part.parse()?;
        if !out.contains(&n) {
            out.push(n);
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("empty nutrient selection `{s}`")));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoodItem {
    pub food_code: String,
    pub category_id: String,
    pub nutrients: NutrientVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryEntry {
    pub id: String,
    /// Energy (kcal), carbohydrate, fat, protein (g), per 100 g.
    pub nutrients: NutrientVector,
    pub image_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryTable {
    categories: Vec<CategoryEntry>,
}

impl CategoryTable {
    /// Builds a table, sorting entries by id and rejecting duplicates or
    /// negative values.
    pub fn new(mut categories: Vec<CategoryEntry>) -> Result<Self> {
        categories.sort_by(|a, b| a.id.cmp(&b.id));
        for w in categories.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::Validation(format!("duplicate category `{}`", w[0].id)));
            }
        }
        for c in &categories {
            if c.id.is_empty() {
                return Err(Error::Validation("empty category id".into()));
            }
            if c.nutrients.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Validation(format!(
                    "category `{}` has a negative or non-finite nutrient value",
                    c.id
                )));
            }
        }
        Ok(Self { categories })
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn entries(&self) -> &[CategoryEntry] {
        &self.categories
    }

    pub fn labels(&self) -> Vec<String> {
        self.categories.iter().map(|c| c.id.clone()).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.categories
            .binary_search_by(|c| c.id.as_str().cmp(id))
            .ok()
    }

    pub fn get(&self, id: &str) -> Option<&CategoryEntry> {
        self.index_of(id).map(|i| &self.categories[i])
    }

    pub fn value(&self, index: usize, nutrient: Nutrient) -> f64 {
        self.categories[index].nutrients[nutrient.index()]
    }

    pub fn values(&self, nutrient: Nutrient) -> Vec<f64> {
        self.categories
            .iter()
            .map(|c| c.nutrients[nutrient.index()])
            .collect()
    }

    pub fn total_images(&self) -> u64 {
        self.categories.iter().map(|c| c.image_count).sum()
    }

    /// Replaces image counts; categories absent from `counts` get 0.
    pub fn with_image_counts(mut self, counts: &BTreeMap<String, u64>) -> Self {
        for c in &mut self.categories {
            c.image_count = counts.get(&c.id).copied().unwrap_or(0);
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NutrientStats {
    /// Population standard deviation across category-level values.
    pub std: NutrientVector,
    pub min: NutrientVector,
    pub max: NutrientVector,
    /// Nutrients whose standard deviation is zero; similarity ops reject them.
    pub degenerate: Vec<Nutrient>,
}

impl NutrientStats {
    pub fn sigma(&self, nutrient: Nutrient) -> f64 {
        self.std[nutrient.index()]
    }

    pub fn range(&self, nutrient: Nutrient) -> (f64, f64) {
        (self.min[nutrient.index()], self.max[nutrient.index()])
    }
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader)
}

fn check_header(record: Option<csv::StringRecord>, expected: &[&str]) -> Result<()> {
    let Some(header) = record else {
        return Err(Error::Format {
            row: 1,
            message: format!("missing header, expected `{}`", expected.join(",")),
        });
    };
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(Error::Format {
            row: 1,
            message: format!(
                "unexpected header `{}`, expected `{}`",
                got.join(","),
                expected.join(",")
            ),
        });
    }
    Ok(())
}

fn parse_number(field: &str, row: usize, column: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            row,
            column: column.to_string(),
            value: field.to_string(),
        })
}

pub fn parse_nutrient_csv(path: impl AsRef<Path>) -> Result<Vec<FoodItem>> {
    parse_nutrient_csv_from(open(path.as_ref())?)
}

/// Reads the nutrient CSV format. Row numbers in errors are 1-based file
/// lines (the header is line 1).
pub fn parse_nutrient_csv_from<R: Read>(reader: R) -> Result<Vec<FoodItem>> {
    let mut rdr = csv_reader(reader);
    let mut records = rdr.records();
    check_header(records.next().transpose()?, &NUTRIENT_CSV_HEADER)?;

    let mut items = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec?;
        if rec.len() != NUTRIENT_CSV_HEADER.len() {
            return Err(Error::Format {
                row,
                message: format!(
                    "expected {} columns, found {}",
                    NUTRIENT_CSV_HEADER.len(),
                    rec.len()
                ),
            });
        }
        let category_id = rec[1].to_string();
        if category_id.is_empty() {
            return Err(Error::Validation(format!("row {row}: empty category")));
        }
        let mut nutrients = [0.0; NUTRIENT_COUNT];
        for (k, slot) in nutrients.iter_mut().enumerate() {
            let column = NUTRIENT_CSV_HEADER[k + 2];
            let v = parse_number(&rec[k + 2], row, column)?;
            if v < 0.0 {
                return Err(Error::Validation(format!(
                    "row {row}: negative value {v} in column `{column}`"
                )));
            }
            *slot = v;
        }
        items.push(FoodItem {
            food_code: rec[0].to_string(),
            category_id,
            nutrients,
        });
    }
    Ok(items)
}

pub fn parse_counts_csv(path: impl AsRef<Path>) -> Result<BTreeMap<String, u64>> {
    parse_counts_csv_from(open(path.as_ref())?)
}

pub fn parse_counts_csv_from<R: Read>(reader: R) -> Result<BTreeMap<String, u64>> {
    let mut rdr = csv_reader(reader);
    let mut records = rdr.records();
    check_header(records.next().transpose()?, &COUNTS_CSV_HEADER)?;

    let mut counts = BTreeMap::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::Format {
                row,
                message: format!("expected 2 columns, found {}", rec.len()),
            });
        }
        let n = rec[1].parse::<u64>().map_err(|_| Error::Parse {
            row,
            column: "image_count".into(),
            value: rec[1].to_string(),
        })?;
        if counts.insert(rec[0].to_string(), n).is_some() {
            return Err(Error::Validation(format!(
                "row {row}: duplicate category `{}`",
                &rec[0]
            )));
        }
    }
    Ok(counts)
}

pub fn write_nutrient_csv(items: &[FoodItem]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(NUTRIENT_CSV_HEADER)?;
    for it in items {
        let mut rec = vec![it.food_code.clone(), it.category_id.clone()];
        rec.extend(it.nutrients.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    finish_csv(w)
}

pub fn write_counts_csv(counts: &BTreeMap<String, u64>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COUNTS_CSV_HEADER)?;
    for (id, n) in counts {
        w.write_record([id.as_str(), &n.to_string()])?;
    }
    finish_csv(w)
}

pub(crate) fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Validation(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Validation(format!("csv utf-8: {e}")))
}

/// Averages food items into one nutrient vector per category.
///
/// Each component is summed in sorted order, so the result does not depend
/// on the order of `items`. Categories missing from `counts` get an image
/// count of 0.
pub fn aggregate_categories(
    items: &[FoodItem],
    counts: &BTreeMap<String, u64>,
) -> Result<CategoryTable> {
    if items.is_empty() {
        return Err(Error::Degenerate("no food items to aggregate".into()));
    }
    let mut grouped: BTreeMap<&str, Vec<&NutrientVector>> = BTreeMap::new();
    for it in items {
        if it.category_id.is_empty() {
            return Err(Error::Validation(format!(
                "food item `{}` has an empty category",
                it.food_code
            )));
        }
        if it.nutrients.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation(format!(
                "food item `{}` has a negative or non-finite nutrient value",
                it.food_code
            )));
        }
        grouped.entry(&it.category_id).or_default().push(&it.nutrients);
    }

    let entries = grouped
        .into_iter()
        .map(|(id, vectors)| {
            let mut mean = [0.0; NUTRIENT_COUNT];
            for (k, slot) in mean.iter_mut().enumerate() {
                let mut column: Vec<f64> = vectors.iter().map(|v| v[k]).collect();
                column.sort_by(f64::total_cmp);
                let sum: f64 = column.iter().sum();
                let lo = column[0];
                let hi = column[column.len() - 1];
                // rounding in the division can step just outside the item range
                *slot = (sum / column.len() as f64).clamp(lo, hi);
            }
            CategoryEntry {
                id: id.to_string(),
                nutrients: mean,
                image_count: counts.get(id).copied().unwrap_or(0),
            }
        })
        .collect();
    CategoryTable::new(entries)
}

/// Population standard deviation and range of each nutrient across the
/// category-level values (one value per category, not image weighted).
pub fn inter_class_std(table: &CategoryTable) -> Result<NutrientStats> {
    let k = table.len();
    if k < 2 {
        return Err(Error::Degenerate(format!(
            "inter-class statistics need at least 2 categories, got {k}"
        )));
    }
    let mut stats = NutrientStats {
        std: [0.0; NUTRIENT_COUNT],
        min: [f64::INFINITY; NUTRIENT_COUNT],
        max: [f64::NEG_INFINITY; NUTRIENT_COUNT],
        degenerate: Vec::new(),
    };
    for n in Nutrient::ALL {
        let values = table.values(n);
        let mean = values.iter().sum::<f64>() / k as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k as f64;
        let i = n.index();
        stats.std[i] = var.sqrt();
        for v in values {
            stats.min[i] = stats.min[i].min(v);
            stats.max[i] = stats.max[i].max(v);
        }
        if stats.std[i] == 0.0 {
            stats.degenerate.push(n);
        }
    }
    Ok(stats)
}
