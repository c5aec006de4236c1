//! Pipeline stages and their persisted file formats.
//!
//! Every stage is a pure function of its inputs (including seeds), so any
//! stage re-run on persisted intermediates reproduces the matching slice of
//! a full pipeline run byte for byte. Outputs carry no timestamps and all
//! iteration orders are fixed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use aca_core::analysis::{ci_coverage, detect_bend, extract_ranges, MetricsReport, DEFAULT_BEND_DEG};
use aca_core::bootstrap::{
    bootstrap_curves_multi, empirical_band, BootstrapConfig, ConfidenceBand, Fitter,
    MarginalQuery,
};
use aca_core::dataset::{
    build_dataset_opts, load_meals_csv, write_meals_csv, ColumnData, CovariateSpec,
    CovariateValue, Dataset, LoadReport, MealRecord, MealType,
};
use aca_core::fit::{dataset_assignments, fit_dataset, AcaFitOutput};
use aca_core::linreg::{lm_marginalize, lm_predict_samples, ols_fit, LinearModel};
use aca_core::model::{
    aca_marginalize, predict_samples, AcaFitConfig, AcaModel, FitReport, MarginalCurve,
};
use aca_core::synth::{generate_synthetic, SynthConfig};

/// Resolved knobs shared across pipeline stages.
#[derive(Debug, Clone)]
pub struct Settings {
    pub seed: u64,
    pub components: usize,
    pub lambda: f64,
    pub grid_nodes: usize,
    pub eval_points: usize,
    pub bootstrap_iters: usize,
    pub bootstrap_size: usize,
    pub level: f64,
    pub min_meals: usize,
    pub threshold: Option<f64>,
}

impl Settings {
    pub fn aca_config(&self) -> AcaFitConfig {
        AcaFitConfig {
            components: self.components,
            lambda: self.lambda,
            seed: self.seed,
            ..AcaFitConfig::default()
        }
    }

    pub fn bootstrap_config(&self) -> BootstrapConfig {
        BootstrapConfig {
            iterations: self.bootstrap_iters,
            sample_size: self.bootstrap_size,
            level: self.level,
            seed: self.seed,
        }
    }
}

/// Names of the meal-type subsets a pipeline run covers, `all` first.
pub const SUBSETS: [Option<MealType>; 4] = [
    None,
    Some(MealType::Breakfast),
    Some(MealType::Lunch),
    Some(MealType::Dinner),
];

pub fn subset_name(subset: Option<MealType>) -> &'static str {
    match subset {
        None => "all",
        Some(mt) => mt.as_str(),
    }
}

pub fn parse_subset(name: &str) -> Result<Option<MealType>> {
    if name.eq_ignore_ascii_case("all") {
        return Ok(None);
    }
    MealType::parse(name)
        .map(Some)
        .ok_or_else(|| anyhow!("unknown subset `{name}` (use all|breakfast|lunch|dinner|other)"))
}

/// Keep file names readable and collision-safe enough for ids and labels.
pub fn sanitize(part: &str) -> String {
    part.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// persisted file formats

/// Plot-ready curve output: one file per model x covariate x subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveFile {
    pub model: String,
    pub user_id: String,
    pub subset: String,
    pub covariate: String,
    pub units: String,
    pub eval_points: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
    pub seed: u64,
}

impl CurveFile {
    pub fn file_name(&self) -> String {
        format!(
            "{}_{}_{}_{}.curve.json",
            sanitize(&self.user_id),
            sanitize(&self.subset),
            sanitize(&self.covariate),
            self.model
        )
    }

    pub fn curve(&self) -> MarginalCurve {
        MarginalCurve {
            names: vec![self.covariate.clone()],
            axes: vec![self.eval_points.iter().map(|v| CovariateValue::Real(*v)).collect()],
            mean: self.mean.clone(),
        }
    }

    pub fn band(&self) -> ConfidenceBand {
        ConfidenceBand {
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            level: self.level,
        }
    }
}

/// A fitted model persisted with the dataset-construction parameters it
/// needs to be re-applied to its input CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub user_id: String,
    pub subset: String,
    pub grid_nodes: usize,
    pub min_meals: usize,
    #[serde(flatten)]
    pub fitted: PersistedModel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PersistedModel {
    Aca { model: AcaModel, report: FitReport },
    Linreg { model: LinearModel },
}

impl ModelFile {
    pub fn model_name(&self) -> &'static str {
        match self.fitted {
            PersistedModel::Aca { .. } => "aca",
            PersistedModel::Linreg { .. } => "linreg",
        }
    }

    pub fn file_name(&self) -> String {
        format!(
            "{}_{}_{}.model.json",
            sanitize(&self.user_id),
            sanitize(&self.subset),
            self.model_name()
        )
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

// ---------------------------------------------------------------------------
// input handling

pub struct Input {
    pub records: Vec<MealRecord>,
    pub summary: String,
}

/// A path's file name, for log lines that must not depend on where the
/// run directory lives.
fn display_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn load_input(path: &Path) -> Result<Input> {
    let report: LoadReport = load_meals_csv(path)?;
    let mut summary = format!(
        "input: {} ({} records, {} rejected, {} flagged)",
        display_name(path),
        report.records.len(),
        report.rejected.len(),
        report.flagged.len()
    );
    for issue in &report.rejected {
        let _ = write!(summary, "\n  rejected {issue}");
    }
    for issue in &report.flagged {
        let _ = write!(summary, "\n  flagged {issue}");
    }
    Ok(Input {
        records: report.records,
        summary,
    })
}

/// Users in sorted order with their total meal counts.
pub fn user_counts(records: &[MealRecord]) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(r.user_id.clone()).or_insert(0) += 1;
    }
    counts.into_iter().collect()
}

// ---------------------------------------------------------------------------
// synth stage

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SynthSpec {
    One(Box<SynthConfig>),
    Many(Vec<SynthConfig>),
}

impl SynthSpec {
    pub fn configs(self) -> Vec<SynthConfig> {
        match self {
            SynthSpec::One(c) => vec![*c],
            SynthSpec::Many(cs) => cs,
        }
    }
}

/// Generate meal logs from a spec file. User i uses seed + i, so adding a
/// user never perturbs earlier ones. Writes `meals.csv` and `truth.csv`.
pub fn synth_stage(spec_path: &Path, seed: u64, out: &Path) -> Result<(PathBuf, String)> {
    let spec: SynthSpec = read_json(spec_path)?;
    let configs = spec.configs();
    if configs.is_empty() {
        bail!("synth spec has no user configs");
    }
    fs::create_dir_all(out)?;
    let mut records = Vec::new();
    let mut truth_rows = Vec::new();
    for (idx, config) in configs.iter().enumerate() {
        let data = generate_synthetic(config, seed.wrapping_add(idx as u64))?;
        for (r, t) in data.records.iter().zip(&data.truth) {
            truth_rows.push((records.len() + truth_rows.len() + 1, r.user_id.clone(), *t));
        }
        records.extend(data.records);
    }
    // renumber rows after extension (rows are 1-based data rows in meals.csv)
    let truth_rows: Vec<(usize, String, f64)> = truth_rows
        .into_iter()
        .enumerate()
        .map(|(i, (_, user, t))| (i + 1, user, t))
        .collect();

    let meals_path = out.join("meals.csv");
    write_meals_csv(&meals_path, &records)?;
    let mut truth_csv = String::from("row,user_id,truth\n");
    for (row, user, t) in &truth_rows {
        let _ = writeln!(truth_csv, "{row},{user},{t}");
    }
    fs::write(out.join("truth.csv"), truth_csv)?;
    let log = format!(
        "synth: {} users, {} records from {}",
        configs.len(),
        records.len(),
        display_name(spec_path)
    );
    Ok((meals_path, log))
}

// ---------------------------------------------------------------------------
// fit stage

pub struct FittedPair {
    pub dataset: Dataset,
    pub aca: AcaFitOutput,
    pub linreg: LinearModel,
}

pub fn fit_pair(
    records: &[MealRecord],
    user: &str,
    subset: Option<MealType>,
    settings: &Settings,
) -> Result<FittedPair> {
    let dataset = build_dataset_opts(records, user, subset, settings.min_meals, settings.grid_nodes)?;
    let aca = fit_dataset(&dataset, &settings.aca_config())?;
    let linreg = ols_fit(&dataset)?;
    Ok(FittedPair {
        dataset,
        aca,
        linreg,
    })
}

/// Fit both models for one (user, subset) and persist them under
/// `out/models/`.
pub fn fit_stage(
    records: &[MealRecord],
    user: &str,
    subset: Option<MealType>,
    settings: &Settings,
    out: &Path,
) -> Result<(FittedPair, String)> {
    let pair = fit_pair(records, user, subset, settings)?;
    let models_dir = out.join("models");
    fs::create_dir_all(&models_dir)?;
    let subset_str = subset_name(subset).to_string();
    let aca_file = ModelFile {
        user_id: user.to_string(),
        subset: subset_str.clone(),
        grid_nodes: settings.grid_nodes,
        min_meals: settings.min_meals,
        fitted: PersistedModel::Aca {
            model: pair.aca.model.clone(),
            report: pair.aca.report.clone(),
        },
    };
    write_json(&models_dir.join(aca_file.file_name()), &aca_file)?;
    let lin_file = ModelFile {
        user_id: user.to_string(),
        subset: subset_str.clone(),
        grid_nodes: settings.grid_nodes,
        min_meals: settings.min_meals,
        fitted: PersistedModel::Linreg {
            model: pair.linreg.clone(),
        },
    };
    write_json(&models_dir.join(lin_file.file_name()), &lin_file)?;
    let log = format!(
        "user {user} subset {subset_str}: m={}, aca converged={} sweeps={} rank_deficient={}, linreg rank_deficient={}",
        pair.dataset.m(),
        pair.aca.report.converged,
        pair.aca.report.sweeps_run,
        pair.aca.report.rank_deficient,
        pair.linreg.rank_deficient,
    );
    Ok((pair, log))
}

// ---------------------------------------------------------------------------
// marginal queries

/// One marginal query per real covariate: an evenly spaced axis over the
/// covariate's grid range.
pub fn real_covariate_queries(
    dataset: &Dataset,
    eval_points: usize,
) -> Vec<(String, String, MarginalQuery)> {
    let mut queries = Vec::new();
    for cov in &dataset.covariates {
        let (nodes, units) = match (&cov.spec, &cov.data) {
            (CovariateSpec::RealGrid { nodes, units }, ColumnData::Real(_)) => (nodes, units),
            _ => continue,
        };
        let lo = nodes[0];
        let hi = *nodes.last().unwrap();
        let n = eval_points.max(2);
        let axis: Vec<CovariateValue> = (0..n)
            .map(|i| CovariateValue::Real(lo + (hi - lo) * i as f64 / (n - 1) as f64))
            .collect();
        queries.push((
            cov.name.clone(),
            units.clone(),
            MarginalQuery {
                names: vec![cov.name.clone()],
                axes: vec![axis],
            },
        ));
    }
    queries
}

fn axis_reals(query: &MarginalQuery) -> Vec<f64> {
    query.axes[0]
        .iter()
        .map(|v| v.as_real().expect("real axis"))
        .collect()
}

// ---------------------------------------------------------------------------
// bootstrap stage

/// Paired bootstrap over every real covariate for one (user, subset):
/// per model, each replica fits once and marginalizes on all queries; both
/// models share the same master seed, hence the same resampled rows.
/// Writes one curve file per covariate and model under `out/curves/`.
pub fn bootstrap_stage(
    pair: &FittedPair,
    user: &str,
    subset: Option<MealType>,
    settings: &Settings,
    out: &Path,
) -> Result<String> {
    let curves_dir = out.join("curves");
    fs::create_dir_all(&curves_dir)?;
    let queries = real_covariate_queries(&pair.dataset, settings.eval_points);
    let query_list: Vec<MarginalQuery> = queries.iter().map(|(_, _, q)| q.clone()).collect();
    let config = settings.bootstrap_config();
    let subset_str = subset_name(subset).to_string();

    let mut log = String::new();
    for (fitter, model_name) in [
        (Fitter::Aca(settings.aca_config()), "aca"),
        (Fitter::Linreg, "linreg"),
    ] {
        let ensembles = bootstrap_curves_multi(&pair.dataset, &fitter, &query_list, &config)?;
        let failed = ensembles.first().map(|e| e.failed.len()).unwrap_or(0);
        let _ = writeln!(
            log,
            "user {user} subset {subset_str}: bootstrap {model_name} replicas={} failed={}",
            config.iterations, failed
        );
        for ((name, units, query), ensemble) in queries.iter().zip(&ensembles) {
            let band = empirical_band(ensemble, config.level)?;
            let file = CurveFile {
                model: model_name.to_string(),
                user_id: user.to_string(),
                subset: subset_str.clone(),
                covariate: name.clone(),
                units: units.clone(),
                eval_points: axis_reals(query),
                mean: ensemble.mean_curve(),
                lower: band.lower,
                upper: band.upper,
                level: config.level,
                seed: config.seed,
            };
            write_json(&curves_dir.join(file.file_name()), &file)?;
        }
    }
    Ok(log.trim_end().to_string())
}

// ---------------------------------------------------------------------------
// marginal stage (full-data fit, no bands)

/// Marginal curve of a persisted model over one covariate, written in the
/// curve schema with a degenerate band (lower = upper = mean, level 0).
pub fn marginal_stage(
    model_path: &Path,
    input: &Path,
    covariate: &str,
    eval_points: usize,
    out: &Path,
) -> Result<PathBuf> {
    let model_file: ModelFile = read_json(model_path)?;
    let input = load_input(input)?;
    let subset = parse_subset(&model_file.subset)?;
    let dataset = build_dataset_opts(
        &input.records,
        &model_file.user_id,
        subset,
        model_file.min_meals,
        model_file.grid_nodes,
    )?;
    let queries = real_covariate_queries(&dataset, eval_points);
    let (name, units, query) = queries
        .into_iter()
        .find(|(name, _, _)| name == covariate)
        .ok_or_else(|| anyhow!("covariate `{covariate}` not in dataset"))?;

    let (mean, seed) = match &model_file.fitted {
        PersistedModel::Aca { model, .. } => {
            let (_, alphas) = dataset_assignments(&dataset, model.config.seed)?;
            let curve = aca_marginalize(model, &alphas, &query.names, &query.axes)?;
            (curve.mean, model.config.seed)
        }
        PersistedModel::Linreg { model } => {
            let curve = lm_marginalize(model, &query.names, &query.axes)?;
            (curve.mean, 0)
        }
    };
    fs::create_dir_all(out)?;
    let file = CurveFile {
        model: model_file.model_name().to_string(),
        user_id: model_file.user_id.clone(),
        subset: model_file.subset.clone(),
        covariate: name,
        units,
        eval_points: axis_reals(&query),
        lower: mean.clone(),
        upper: mean.clone(),
        mean,
        level: 0.0,
        seed,
    };
    let path = out.join(file.file_name());
    write_json(&path, &file)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// evaluate stage

/// Per-sample predictions of a persisted model on its training dataset.
fn training_predictions(fitted: &PersistedModel, dataset: &Dataset) -> Result<Vec<f64>> {
    match fitted {
        PersistedModel::Aca { model, .. } => {
            let (_, alphas) = dataset_assignments(dataset, model.config.seed)?;
            Ok(predict_samples(model, &alphas)?)
        }
        PersistedModel::Linreg { model } => Ok(lm_predict_samples(model, dataset)?),
    }
}

/// Full-data-fit marginal curves of a persisted model on the eval axes of
/// the given curve files.
fn full_fit_marginals(
    fitted: &PersistedModel,
    dataset: &Dataset,
    curve_files: &[CurveFile],
) -> Result<Vec<MarginalCurve>> {
    let mut curves = Vec::with_capacity(curve_files.len());
    for cf in curve_files {
        let names = vec![cf.covariate.clone()];
        let axes = vec![cf
            .eval_points
            .iter()
            .map(|v| CovariateValue::Real(*v))
            .collect::<Vec<_>>()];
        let curve = match fitted {
            PersistedModel::Aca { model, .. } => {
                let (_, alphas) = dataset_assignments(dataset, model.config.seed)?;
                aca_marginalize(model, &alphas, &names, &axes)?
            }
            PersistedModel::Linreg { model } => lm_marginalize(model, &names, &axes)?,
        };
        curves.push(curve);
    }
    Ok(curves)
}

/// Evaluate one persisted model against its dataset and curve files.
fn score_model(
    mf: &ModelFile,
    dataset: &Dataset,
    curve_files: &[CurveFile],
) -> Result<MetricsReport> {
    let preds = training_predictions(&mf.fitted, dataset)?;
    let rmse_full = aca_core::analysis::rmse_full(&preds, &dataset.x)?;
    let marginals = full_fit_marginals(&mf.fitted, dataset, curve_files)?;
    let rmse_marginal = aca_core::analysis::rmse_marginal(&marginals, dataset)?;
    let bands: Vec<(MarginalCurve, ConfidenceBand)> = curve_files
        .iter()
        .map(|cf| (cf.curve(), cf.band()))
        .collect();
    let coverage = ci_coverage(dataset, &bands)?;
    let bends = curve_files
        .iter()
        .map(|cf| {
            detect_bend(&cf.curve(), DEFAULT_BEND_DEG)
                .map(|report| (cf.covariate.clone(), report))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MetricsReport {
        rmse_full,
        rmse_marginal,
        coverage,
        bends,
    })
}

/// Evaluate persisted models against their input data and bootstrap curve
/// files: full and marginal RMSE from the full-data fits, coverage from the
/// persisted bands, bend reports from the plotted means.
pub fn evaluate_stage(
    input: &Path,
    models_dir: &Path,
    curves_dir: &Path,
    out: &Path,
) -> Result<String> {
    let input = load_input(input)?;
    let mut model_files: Vec<ModelFile> = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(models_dir)
        .with_context(|| format!("reading {}", models_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(".model.json")))
        .collect();
    entries.sort();
    for path in entries {
        model_files.push(read_json(&path)?);
    }
    if model_files.is_empty() {
        bail!("no .model.json files in {}", models_dir.display());
    }

    let mut reports: Vec<(&ModelFile, MetricsReport)> = Vec::new();
    for mf in &model_files {
        let subset = parse_subset(&mf.subset)?;
        let dataset = build_dataset_opts(
            &input.records,
            &mf.user_id,
            subset,
            mf.min_meals,
            mf.grid_nodes,
        )?;
        // curve files for this (user, subset, model), in dataset covariate order
        let mut curve_files = Vec::new();
        for cov in &dataset.covariates {
            if !matches!(cov.data, ColumnData::Real(_)) {
                continue;
            }
            let name = format!(
                "{}_{}_{}_{}.curve.json",
                sanitize(&mf.user_id),
                sanitize(&mf.subset),
                sanitize(&cov.name),
                mf.model_name()
            );
            let path = curves_dir.join(&name);
            if !path.exists() {
                bail!("missing curve file {}", path.display());
            }
            curve_files.push(read_json::<CurveFile>(&path)?);
        }
        let report = score_model(mf, &dataset, &curve_files)?;
        reports.push((mf, report));
    }

    let covariate_names: Vec<String> = reports[0]
        .1
        .coverage
        .per_covariate
        .iter()
        .map(|(name, _)| name.clone())
        .collect();

    fs::create_dir_all(out)?;
    let mut metrics_csv = String::from("user_id,subset,model,rmse_full,rmse_marginal,coverage_mean_pct");
    for name in &covariate_names {
        let _ = write!(metrics_csv, ",coverage_{name}_pct");
    }
    metrics_csv.push_str(",coverage_pooled_pct\n");
    for (mf, report) in &reports {
        let _ = write!(
            metrics_csv,
            "{},{},{},{},{},{}",
            mf.user_id,
            mf.subset,
            mf.model_name(),
            report.rmse_full,
            report.rmse_marginal,
            report.coverage.mean_pct
        );
        for name in &covariate_names {
            let pct = report
                .coverage
                .per_covariate
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, p)| *p)
                .unwrap_or(f64::NAN);
            let _ = write!(metrics_csv, ",{pct}");
        }
        let _ = writeln!(metrics_csv, ",{}", report.coverage.pooled_pct);
    }
    fs::write(out.join("metrics.csv"), &metrics_csv)?;

    let mut bends_csv = String::from("user_id,subset,model,covariate,max_bend_deg,flagged\n");
    for (mf, report) in &reports {
        for (covariate, bend) in &report.bends {
            let _ = writeln!(
                bends_csv,
                "{},{},{},{},{},{}",
                mf.user_id,
                mf.subset,
                mf.model_name(),
                covariate,
                bend.max_bend_deg,
                bend.flagged
            );
        }
    }
    fs::write(out.join("bends.csv"), &bends_csv)?;

    Ok(format!(
        "evaluate: {} models scored, metrics.csv and bends.csv written",
        model_files.len()
    ))
}

// ---------------------------------------------------------------------------
// ranges stage

/// Threshold-based range extraction over the component-model curves in a
/// directory. Baseline curves are skipped: the output schema identifies a
/// range by (user, subset, covariate) alone, and the decision-support flow
/// reads ranges off the component estimate.
pub fn ranges_stage(curves_dir: &Path, threshold: f64, out: &Path) -> Result<String> {
    let mut paths: Vec<PathBuf> = fs::read_dir(curves_dir)
        .with_context(|| format!("reading {}", curves_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(".curve.json")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .curve.json files in {}", curves_dir.display());
    }
    let mut csv = String::from("user_id,subset,covariate,threshold,kind,lo,hi\n");
    let mut count = 0;
    for path in paths {
        let cf: CurveFile = read_json(&path)?;
        if cf.model != "aca" {
            continue;
        }
        let set = extract_ranges(&cf.curve(), threshold)?;
        for (kind, list) in [("above", &set.above), ("below", &set.below)] {
            for (lo, hi) in list {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{}",
                    cf.user_id, cf.subset, cf.covariate, threshold, kind, lo, hi
                );
                count += 1;
            }
        }
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("ranges.csv"), &csv)?;
    Ok(format!("ranges: {count} intervals written to ranges.csv"))
}

// ---------------------------------------------------------------------------
// full pipeline

/// Run ingestion (or generation), paired fits, paired bootstrap, metrics,
/// bends and optional ranges for every qualifying user and meal subset.
/// Deterministic given the settings; writes a run log listing resolved
/// defaults and per-step outcomes.
pub fn run_pipeline(
    input: Option<&Path>,
    synth: Option<&Path>,
    settings: &Settings,
    out: &Path,
) -> Result<String> {
    fs::create_dir_all(out)?;
    let mut log: Vec<String> = Vec::new();
    log.push(format!(
        "settings: seed={} components={} lambda={} grid_nodes={} eval_points={} bootstrap_iters={} bootstrap_size={} level={} min_meals={} threshold={}",
        settings.seed,
        settings.components,
        settings.lambda,
        settings.grid_nodes,
        settings.eval_points,
        settings.bootstrap_iters,
        settings.bootstrap_size,
        settings.level,
        settings.min_meals,
        settings
            .threshold
            .map(|t| t.to_string())
            .unwrap_or_else(|| "none".into()),
    ));

    let input_path: PathBuf = match (input, synth) {
        (Some(path), None) => path.to_path_buf(),
        (None, Some(spec)) => {
            let (path, line) = synth_stage(spec, settings.seed, out)?;
            log.push(line);
            path
        }
        _ => bail!("exactly one of --input and --synth is required"),
    };

    let input = load_input(&input_path)?;
    log.push(input.summary.clone());
    if input.records.is_empty() {
        bail!("no valid records in {}", input_path.display());
    }

    for (user, count) in user_counts(&input.records) {
        if count < settings.min_meals {
            log.push(format!(
                "user {user}: skipped ({count} meals < {} required)",
                settings.min_meals
            ));
            continue;
        }
        log.push(format!("user {user}: {count} meals"));
        for subset in SUBSETS {
            let subset_str = subset_name(subset);
            let m = input
                .records
                .iter()
                .filter(|r| {
                    r.user_id == user && subset.map(|mt| r.meal_type == mt).unwrap_or(true)
                })
                .count();
            if m < 3 {
                log.push(format!(
                    "user {user} subset {subset_str}: skipped ({m} meals < 3)"
                ));
                continue;
            }
            let (pair, fit_log) = fit_stage(&input.records, &user, subset, settings, out)?;
            log.push(fit_log);
            let boot_log = bootstrap_stage(&pair, &user, subset, settings, out)?;
            log.push(boot_log);
        }
    }

    let eval_log = evaluate_stage(&input_path, &out.join("models"), &out.join("curves"), out)?;
    log.push(eval_log);

    if let Some(threshold) = settings.threshold {
        let ranges_log = ranges_stage(&out.join("curves"), threshold, out)?;
        log.push(ranges_log);
    }

    let log_text = log.join("\n") + "\n";
    fs::write(out.join("run.log"), &log_text)?;
    Ok(log_text)
}
