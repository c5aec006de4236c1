//! Meal-log ingestion and dataset assembly.
//!
//! The response modeled throughout the crate is the BG impact of a meal:
//! post-meal blood glucose minus pre-meal blood glucose, in mg/dl. Covariates
//! are the four macronutrients in grams plus pre-meal BG, and optionally the
//! meal type as a categorical column.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assign::build_grid;
use crate::error::IngestError;

/// Expected CSV header, in order.
pub const CSV_HEADER: [&str; 8] = [
    "user_id",
    "meal_type",
    "carbs_g",
    "fat_g",
    "protein_g",
    "fiber_g",
    "pre_bg_mgdl",
    "post_bg_mgdl",
];

/// Default minimum number of meals a user must have logged to be modeled.
pub const DEFAULT_MIN_MEALS: usize = 30;

/// Default number of grid nodes per real covariate.
pub const DEFAULT_GRID_NODES: usize = 11;

/// Nutrient entries above this many grams get flagged at load time.
pub const NUTRIENT_FLAG_G: f64 = 100.0;

/// Meal category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MealType {
    Breakfast,
    Lunch,
    Dinner,
    Other,
}

impl MealType {
    pub const ALL: [MealType; 4] = [
        MealType::Breakfast,
        MealType::Lunch,
        MealType::Dinner,
        MealType::Other,
    ];

    pub fn parse(s: &str) -> Option<MealType> {
        match s.trim().to_ascii_lowercase().as_str() {
            "breakfast" => Some(MealType::Breakfast),
            "lunch" => Some(MealType::Lunch),
            "dinner" => Some(MealType::Dinner),
            "other" => Some(MealType::Other),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            MealType::Breakfast => "breakfast",
            MealType::Lunch => "lunch",
            MealType::Dinner => "dinner",
            MealType::Other => "other",
        }
    }
}

impl fmt::Display for MealType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One validated meal log entry. Nutrients may be missing (empty CSV cell);
/// when present they are finite and non-negative. BG readings are required,
/// finite and strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MealRecord {
    pub user_id: String,
    pub meal_type: MealType,
    pub carbs: Option<f64>,
    pub fat: Option<f64>,
    pub protein: Option<f64>,
    pub fiber: Option<f64>,
    pub pre_bg: f64,
    pub post_bg: f64,
}

impl MealRecord {
    /// BG impact of this meal.
    pub fn impact(&self) -> f64 {
        self.post_bg - self.pre_bg
    }

    pub fn nutrient(&self, name: &str) -> Option<f64> {
        match name {
            "carbs" => self.carbs,
            "fat" => self.fat,
            "protein" => self.protein,
            "fiber" => self.fiber,
            "pre_bg" => Some(self.pre_bg),
            _ => None,
        }
    }
}

/// BG impact: post-meal minus pre-meal reading, in mg/dl.
pub fn bg_impact(pre: f64, post: f64) -> Result<f64, IngestError> {
    if !pre.is_finite() || !post.is_finite() {
        return Err(IngestError::NonFinite(format!(
            "bg_impact(pre={pre}, post={post})"
        )));
    }
    if pre <= 0.0 {
        return Err(IngestError::NonPositiveBg(pre));
    }
    if post <= 0.0 {
        return Err(IngestError::NonPositiveBg(post));
    }
    Ok(post - pre)
}

/// A row that failed validation, with its location and reason.
#[derive(Debug, Clone)]
pub struct RowIssue {
    /// 1-based data row number (first row after the header is row 1).
    pub row: usize,
    pub column: String,
    pub reason: String,
}

impl fmt::Display for RowIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}, column `{}`: {}", self.row, self.column, self.reason)
    }
}

/// Result of loading a meal CSV: valid records in file order, rejected rows,
/// and flagged-but-kept rows (nutrient entries above 100 g).
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub records: Vec<MealRecord>,
    pub rejected: Vec<RowIssue>,
    pub flagged: Vec<RowIssue>,
}

/// Load meal records from a CSV file with the documented header.
///
/// Structural problems (missing file, wrong header) fail the whole load.
/// Rows that violate record invariants are rejected individually and
/// reported with their row number; the remaining rows load in file order.
/// Nutrient entries above 100 g are kept and flagged.
pub fn load_meals_csv(path: &Path) -> Result<LoadReport, IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let headers = reader
        .headers()
        .map_err(|e| IngestError::Invalid(format!("cannot read header: {e}")))?
        .clone();
    if headers.len() != CSV_HEADER.len() {
        return Err(IngestError::BadHeader {
            expected: CSV_HEADER.join(","),
            found: headers.iter().collect::<Vec<_>>().join(","),
            position: headers.len().min(CSV_HEADER.len()),
        });
    }
    for (pos, (found, expected)) in headers.iter().zip(CSV_HEADER.iter()).enumerate() {
        if found != *expected {
            return Err(IngestError::BadHeader {
                expected: (*expected).to_string(),
                found: found.to_string(),
                position: pos,
            });
        }
    }

    let mut report = LoadReport::default();
    for (idx, row) in reader.records().enumerate() {
        let row_no = idx + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                report.rejected.push(RowIssue {
                    row: row_no,
                    column: String::new(),
                    reason: format!("malformed row: {e}"),
                });
                continue;
            }
        };
        match parse_row(&row, row_no) {
            Ok(record) => {
                for (name, value) in [
                    ("carbs_g", record.carbs),
                    ("fat_g", record.fat),
                    ("protein_g", record.protein),
                    ("fiber_g", record.fiber),
                ] {
                    if let Some(v) = value {
                        if v > NUTRIENT_FLAG_G {
                            report.flagged.push(RowIssue {
                                row: row_no,
                                column: name.to_string(),
                                reason: format!("{v} g exceeds {NUTRIENT_FLAG_G} g"),
                            });
                        }
                    }
                }
                report.records.push(record);
            }
            Err(issue) => report.rejected.push(issue),
        }
    }
    Ok(report)
}

fn parse_row(row: &csv::StringRecord, row_no: usize) -> Result<MealRecord, RowIssue> {
    let issue = |column: &str, reason: String| RowIssue {
        row: row_no,
        column: column.to_string(),
        reason,
    };
    let field = |i: usize| row.get(i).unwrap_or("");

    let user_id = field(0).to_string();
    if user_id.is_empty() {
        return Err(issue("user_id", "empty user id".into()));
    }
    let meal_type = MealType::parse(field(1))
        .ok_or_else(|| issue("meal_type", format!("unknown meal type `{}`", field(1))))?;

    let nutrient = |i: usize, name: &str| -> Result<Option<f64>, RowIssue> {
        let raw = field(i);
        if raw.is_empty() {
            return Ok(None);
        }
        let v: f64 = raw
            .parse()
            .map_err(|_| issue(name, format!("non-numeric value `{raw}`")))?;
        if !v.is_finite() {
            return Err(issue(name, format!("non-finite value `{raw}`")));
        }
        if v < 0.0 {
            return Err(issue(name, format!("negative nutrient {v}")));
        }
        Ok(Some(v))
    };
    let carbs = nutrient(2, "carbs_g")?;
    let fat = nutrient(3, "fat_g")?;
    let protein = nutrient(4, "protein_g")?;
    let fiber = nutrient(5, "fiber_g")?;

    let bg = |i: usize, name: &str| -> Result<f64, RowIssue> {
        let raw = field(i);
        let v: f64 = raw
            .parse()
            .map_err(|_| issue(name, format!("non-numeric value `{raw}`")))?;
        if !v.is_finite() {
            return Err(issue(name, format!("non-finite value `{raw}`")));
        }
        if v <= 0.0 {
            return Err(issue(name, format!("blood glucose must be positive, got {v}")));
        }
        Ok(v)
    };
    let pre_bg = bg(6, "pre_bg_mgdl")?;
    let post_bg = bg(7, "post_bg_mgdl")?;

    Ok(MealRecord {
        user_id,
        meal_type,
        carbs,
        fat,
        protein,
        fiber,
        pre_bg,
        post_bg,
    })
}

/// Write meal records to a CSV file with the documented header.
pub fn write_meals_csv(path: &Path, records: &[MealRecord]) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| IngestError::Invalid(e.to_string()))?;
    writer
        .write_record(CSV_HEADER)
        .map_err(|e| IngestError::Invalid(e.to_string()))?;
    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in records {
        writer
            .write_record(&[
                r.user_id.clone(),
                r.meal_type.as_str().to_string(),
                fmt_opt(r.carbs),
                fmt_opt(r.fat),
                fmt_opt(r.protein),
                fmt_opt(r.fiber),
                format!("{}", r.pre_bg),
                format!("{}", r.post_bg),
            ])
            .map_err(|e| IngestError::Invalid(e.to_string()))?;
    }
    writer.flush().map_err(|e| IngestError::Invalid(e.to_string()))?;
    Ok(())
}

/// How a covariate is represented for assignment purposes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovariateSpec {
    /// Finite set of ordered category labels.
    Categorical { levels: Vec<String> },
    /// Real values interpolated on a strictly increasing node grid.
    RealGrid { nodes: Vec<f64>, units: String },
    /// Normed values expressed through learned prototypes.
    Prototyped { count: usize, locality_penalty: f64 },
}

impl CovariateSpec {
    pub fn validate(&self) -> Result<(), IngestError> {
        match self {
            CovariateSpec::Categorical { levels } => {
                if levels.is_empty() {
                    return Err(IngestError::Invalid("categorical with no levels".into()));
                }
                let set: BTreeSet<&String> = levels.iter().collect();
                if set.len() != levels.len() {
                    return Err(IngestError::Invalid("duplicate category levels".into()));
                }
            }
            CovariateSpec::RealGrid { nodes, .. } => {
                if nodes.len() < 2 {
                    return Err(IngestError::Invalid("grid needs at least 2 nodes".into()));
                }
                if nodes.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(IngestError::Invalid("grid nodes not strictly increasing".into()));
                }
            }
            CovariateSpec::Prototyped { count, locality_penalty } => {
                if *count < 1 {
                    return Err(IngestError::Invalid("prototype count must be >= 1".into()));
                }
                if !locality_penalty.is_finite() || *locality_penalty < 0.0 {
                    return Err(IngestError::Invalid("locality penalty must be >= 0".into()));
                }
            }
        }
        Ok(())
    }
}

/// Per-observation values of one covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnData {
    Real(Vec<Option<f64>>),
    Labels(Vec<Option<String>>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Real(v) => v.len(),
            ColumnData::Labels(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A named covariate column with its representation spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    pub spec: CovariateSpec,
    pub data: ColumnData,
}

/// A query value for one covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariateValue {
    Real(f64),
    Label(String),
}

impl CovariateValue {
    pub fn as_real(&self) -> Option<f64> {
        match self {
            CovariateValue::Real(v) => Some(*v),
            CovariateValue::Label(_) => None,
        }
    }
}

/// m observations of BG impact plus L typed covariate columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub covariates: Vec<Covariate>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        x: Vec<f64>,
        covariates: Vec<Covariate>,
        provenance: impl Into<String>,
    ) -> Result<Dataset, IngestError> {
        let m = x.len();
        if m == 0 {
            return Err(IngestError::Invalid("dataset must have at least 1 observation".into()));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(IngestError::Invalid(format!("non-finite response at index {i}")));
        }
        let mut names = BTreeSet::new();
        for c in &covariates {
            c.spec.validate()?;
            if c.data.len() != m {
                return Err(IngestError::Invalid(format!(
                    "covariate `{}` has {} entries, expected {m}",
                    c.name,
                    c.data.len()
                )));
            }
            if !names.insert(c.name.clone()) {
                return Err(IngestError::Invalid(format!("duplicate covariate name `{}`", c.name)));
            }
        }
        Ok(Dataset {
            x,
            covariates,
            provenance: provenance.into(),
        })
    }

    /// Observation count.
    pub fn m(&self) -> usize {
        self.x.len()
    }

    pub fn covariate(&self, name: &str) -> Option<&Covariate> {
        self.covariates.iter().find(|c| c.name == name)
    }

    /// Names of the real-valued covariates, in dataset order.
    pub fn real_covariate_names(&self) -> Vec<String> {
        self.covariates
            .iter()
            .filter(|c| matches!(c.data, ColumnData::Real(_)))
            .map(|c| c.name.clone())
            .collect()
    }
}

/// Names of the real-valued meal covariates, in the order they enter datasets.
pub const REAL_COVARIATES: [&str; 5] = ["carbs", "fat", "protein", "fiber", "pre_bg"];

/// Assemble a dataset for one user, optionally restricted to a meal type.
///
/// Response is the per-meal BG impact. Covariates are carbs, fat, protein,
/// fiber and pre-meal BG on equally spaced grids, plus meal type as a
/// categorical column on unfiltered ("all meals") builds. Users below
/// `min_meals` total logged meals are refused.
pub fn build_dataset(
    records: &[MealRecord],
    user: &str,
    meal_filter: Option<MealType>,
    min_meals: usize,
) -> Result<Dataset, IngestError> {
    build_dataset_opts(records, user, meal_filter, min_meals, DEFAULT_GRID_NODES)
}

/// `build_dataset` with an explicit grid resolution.
pub fn build_dataset_opts(
    records: &[MealRecord],
    user: &str,
    meal_filter: Option<MealType>,
    min_meals: usize,
    grid_nodes: usize,
) -> Result<Dataset, IngestError> {
    let user_records: Vec<&MealRecord> =
        records.iter().filter(|r| r.user_id == user).collect();
    if user_records.len() < min_meals.max(1) {
        return Err(IngestError::InsufficientData {
            user: user.to_string(),
            count: user_records.len(),
            required: min_meals.max(1),
        });
    }
    let selected: Vec<&MealRecord> = match meal_filter {
        Some(mt) => user_records
            .into_iter()
            .filter(|r| r.meal_type == mt)
            .collect(),
        None => user_records,
    };
    if selected.is_empty() {
        return Err(IngestError::InsufficientData {
            user: user.to_string(),
            count: 0,
            required: 1,
        });
    }

    let x: Vec<f64> = selected.iter().map(|r| r.impact()).collect();

    let mut covariates = Vec::new();
    for (name, getter) in [
        ("carbs", (|r: &MealRecord| r.carbs) as fn(&MealRecord) -> Option<f64>),
        ("fat", |r| r.fat),
        ("protein", |r| r.protein),
        ("fiber", |r| r.fiber),
        ("pre_bg", |r| Some(r.pre_bg)),
    ] {
        let values: Vec<Option<f64>> = selected.iter().map(|r| getter(r)).collect();
        let nodes = build_grid(&values, grid_nodes)
            .map_err(|e| IngestError::Invalid(format!("covariate `{name}`: {e}")))?;
        let units = if name == "pre_bg" { "mg/dl" } else { "g" };
        covariates.push(Covariate {
            name: name.to_string(),
            spec: CovariateSpec::RealGrid {
                nodes,
                units: units.to_string(),
            },
            data: ColumnData::Real(values),
        });
    }

    // Meal type enters only on pooled builds; under a filter it is constant.
    if meal_filter.is_none() {
        let levels: Vec<String> = MealType::ALL
            .iter()
            .filter(|mt| selected.iter().any(|r| r.meal_type == **mt))
            .map(|mt| mt.as_str().to_string())
            .collect();
        if levels.len() > 1 {
            let values: Vec<Option<String>> = selected
                .iter()
                .map(|r| Some(r.meal_type.as_str().to_string()))
                .collect();
            covariates.push(Covariate {
                name: "meal_type".to_string(),
                spec: CovariateSpec::Categorical { levels },
                data: ColumnData::Labels(values),
            });
        }
    }

    let subset = meal_filter.map(|mt| mt.as_str().to_string()).unwrap_or_else(|| "all".into());
    Dataset::new(x, covariates, format!("user={user} subset={subset}"))
}
