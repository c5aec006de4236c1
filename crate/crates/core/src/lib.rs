//! Attributable components analysis of meal/blood-glucose self-monitoring
//! data.
//!
//! The library estimates the conditional mean of a meal's BG impact
//! (post-meal minus pre-meal blood glucose) given its macronutrient
//! composition, as a penalized sum of separable low-rank components fitted
//! by alternating block minimization. Alongside it live an ordinary
//! least-squares baseline sharing the same marginalization interface,
//! bootstrap ensembles with empirical pointwise confidence bands, model
//! evaluation metrics, and threshold-based range extraction for decision
//! support.
//!
//! Modules:
//! - [`dataset`]: CSV ingestion, BG-impact response, typed dataset assembly
//! - [`synth`]: deterministic synthetic meal-log generation
//! - [`assign`]: row-stochastic assignments over categories, grids, prototypes
//! - [`model`]: the component model, its objective, prediction, marginals
//! - [`fit`]: alternating block minimization
//! - [`linreg`]: OLS baseline with the shared marginal interface
//! - [`bootstrap`]: resampling ensembles and confidence bands
//! - [`analysis`]: RMSE metrics, CI coverage, bend detection, range extraction

// index loops mirror the subscript-heavy math throughout
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod assign;
pub mod bootstrap;
pub mod dataset;
pub mod error;
pub mod fit;
pub mod linalg;
pub mod linreg;
pub mod model;
pub mod synth;

pub use analysis::{
    ci_coverage, detect_bend, extract_ranges, rmse_full, rmse_marginal, BendReport,
    CoverageReport, MetricsReport, RangeSet,
};
pub use assign::{
    build_grid, categorical_assign, grid_assign, prototypal_assign, AssignmentMatrix,
    ColumnMeaning, PrototypeSet,
};
pub use bootstrap::{
    bootstrap_curves, bootstrap_curves_multi, empirical_band, resample, BootstrapConfig,
    ConfidenceBand, CurveEnsemble, Fitter, MarginalQuery,
};
pub use dataset::{
    bg_impact, build_dataset, build_dataset_opts, load_meals_csv, write_meals_csv, ColumnData,
    Covariate, CovariateSpec, CovariateValue, Dataset, LoadReport, MealRecord, MealType,
};
pub use error::{AnalysisError, AssignError, BootstrapError, FitError, IngestError};
pub use fit::{aca_fit, dataset_assignments, fit_dataset, solve_block, AcaFitOutput};
pub use linreg::{lm_marginalize, lm_predict, lm_predict_samples, ols_fit, LinTerm, LinearModel};
pub use model::{
    aca_marginalize, aca_objective, aca_predict, penalty_matrix, predict_samples, predict_values,
    AcaFitConfig, AcaModel, FactorMatrix, Feature, FeatureBasis, FitReport, MarginalCurve,
    PenaltyMatrix,
};
pub use synth::{generate_synthetic, Law, OutlierSpec, Shape, SynthConfig, SynthData, TruthFn};
