//! Bootstrap ensembles and empirical pointwise confidence bands over
//! marginal curves, shared by both models.
//!
//! Replica b owns a private generator derived from the master seed as
//! `ChaCha8Rng::seed_from_u64(seed)` with stream `b + 1`, so ensembles are
//! a pure function of their inputs regardless of scheduling, and the two
//! fitters see identical resampled rows under the same seed: each replica
//! draws its row indices before anything model-specific.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnData, Covariate, CovariateValue, Dataset};
use crate::error::BootstrapError;
use crate::fit::fit_dataset;
use crate::linreg::{lm_marginalize, ols_fit};
use crate::model::{aca_marginalize, AcaFitConfig, MarginalCurve};

/// Bootstrap protocol settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Number of replicas B.
    pub iterations: usize,
    /// Rows drawn per replica (with replacement).
    pub sample_size: usize,
    /// Confidence level in (0, 1).
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            iterations: 100,
            sample_size: 500,
            level: 0.95,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), BootstrapError> {
        if self.iterations < 1 {
            return Err(BootstrapError::BadConfig("iterations must be >= 1".into()));
        }
        if self.sample_size < 1 {
            return Err(BootstrapError::BadConfig("sample_size must be >= 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(BootstrapError::BadLevel(self.level));
        }
        Ok(())
    }
}

/// Which model a replica fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Fitter {
    Aca(AcaFitConfig),
    Linreg,
}

impl Fitter {
    pub fn name(&self) -> &'static str {
        match self {
            Fitter::Aca(_) => "aca",
            Fitter::Linreg => "linreg",
        }
    }
}

/// A marginalization request: covariate subset plus one evaluation axis per
/// member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalQuery {
    pub names: Vec<String>,
    pub axes: Vec<Vec<CovariateValue>>,
}

/// Generator owned by one bootstrap replica.
pub fn replica_rng(seed: u64, replica: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // stream 0 stays reserved for non-replica use
    rng.set_stream(replica as u64 + 1);
    rng
}

/// Draw `n` rows uniformly with replacement. Covariate specs (grids,
/// levels) carry over from the parent unchanged.
pub fn resample(
    dataset: &Dataset,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset, BootstrapError> {
    let m = dataset.m();
    if m == 0 {
        return Err(BootstrapError::EmptyParent);
    }
    let indices: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
    Ok(select_rows(dataset, &indices))
}

/// Dataset restricted to the given row indices (with repetition allowed).
pub fn select_rows(dataset: &Dataset, indices: &[usize]) -> Dataset {
    let x: Vec<f64> = indices.iter().map(|&i| dataset.x[i]).collect();
    let covariates: Vec<Covariate> = dataset
        .covariates
        .iter()
        .map(|c| Covariate {
            name: c.name.clone(),
            spec: c.spec.clone(),
            data: match &c.data {
                ColumnData::Real(v) => {
                    ColumnData::Real(indices.iter().map(|&i| v[i]).collect())
                }
                ColumnData::Labels(v) => {
                    ColumnData::Labels(indices.iter().map(|&i| v[i].clone()).collect())
                }
            },
        })
        .collect();
    Dataset {
        x,
        covariates,
        provenance: format!("{} (resampled n={})", dataset.provenance, indices.len()),
    }
}

/// Ensemble of marginal curves over a shared evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEnsemble {
    pub query: MarginalQuery,
    /// Successful replica curves, ordered by replica index.
    pub curves: Vec<Vec<f64>>,
    /// Fit seed drawn by each successful replica, ordered like `curves`.
    pub replica_seeds: Vec<u64>,
    /// (replica index, reason) for replicas whose fit failed.
    pub failed: Vec<(usize, String)>,
}

impl CurveEnsemble {
    /// Pointwise mean across the successful curves.
    pub fn mean_curve(&self) -> Vec<f64> {
        if self.curves.is_empty() {
            return Vec::new();
        }
        let len = self.curves[0].len();
        let mut mean = vec![0.0; len];
        for curve in &self.curves {
            for (m, v) in mean.iter_mut().zip(curve) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= self.curves.len() as f64;
        }
        mean
    }
}

fn fit_and_marginalize(
    dataset: &Dataset,
    fitter: &Fitter,
    queries: &[MarginalQuery],
    fit_seed: u64,
) -> Result<Vec<MarginalCurve>, BootstrapError> {
    match fitter {
        Fitter::Aca(config) => {
            let config = AcaFitConfig {
                seed: fit_seed,
                ..config.clone()
            };
            let out = fit_dataset(dataset, &config)?;
            queries
                .iter()
                .map(|q| {
                    aca_marginalize(&out.model, &out.alphas, &q.names, &q.axes)
                        .map_err(BootstrapError::from)
                })
                .collect()
        }
        Fitter::Linreg => {
            let model = ols_fit(dataset)?;
            queries
                .iter()
                .map(|q| lm_marginalize(&model, &q.names, &q.axes).map_err(BootstrapError::from))
                .collect()
        }
    }
}

/// Run B replicas: each resamples the dataset, fits, and marginalizes on
/// the shared evaluation grid. Replicas run concurrently; output is a pure
/// function of the inputs. Failed replicas are reported, not fatal.
pub fn bootstrap_curves(
    dataset: &Dataset,
    fitter: &Fitter,
    query: &MarginalQuery,
    config: &BootstrapConfig,
) -> Result<CurveEnsemble, BootstrapError> {
    let mut ensembles = bootstrap_curves_multi(dataset, fitter, std::slice::from_ref(query), config)?;
    Ok(ensembles.remove(0))
}

/// `bootstrap_curves` over several queries at once: each replica fits once
/// and marginalizes on every query, so all ensembles share the same replica
/// fits. A replica's resample and fit depend only on (seed, replica index),
/// never on the query list, so any single query's ensemble is identical to
/// a standalone `bootstrap_curves` run.
pub fn bootstrap_curves_multi(
    dataset: &Dataset,
    fitter: &Fitter,
    queries: &[MarginalQuery],
    config: &BootstrapConfig,
) -> Result<Vec<CurveEnsemble>, BootstrapError> {
    config.validate()?;
    if dataset.m() == 0 {
        return Err(BootstrapError::EmptyParent);
    }
    if queries.is_empty() {
        return Err(BootstrapError::BadConfig("no marginal queries".into()));
    }
    for query in queries {
        for name in &query.names {
            if dataset.covariate(name).is_none() {
                return Err(BootstrapError::Fit(
                    crate::error::FitError::UnknownCovariate(name.clone()),
                ));
            }
        }
    }

    type ReplicaOutcome = (usize, u64, Result<Vec<Vec<f64>>, String>);
    let results: Vec<ReplicaOutcome> = (0..config.iterations)
        .into_par_iter()
        .map(|b| {
            let mut rng = replica_rng(config.seed, b);
            // row indices first: both fitters then see identical resamples
            let replica = resample(dataset, config.sample_size, &mut rng)
                .expect("parent dataset checked non-empty");
            let fit_seed: u64 = rng.random();
            let curves = fit_and_marginalize(&replica, fitter, queries, fit_seed)
                .map(|cs| cs.into_iter().map(|c| c.mean).collect::<Vec<Vec<f64>>>())
                .map_err(|e| e.to_string())
                .and_then(|cs| {
                    if cs.iter().flatten().all(|v| v.is_finite()) {
                        Ok(cs)
                    } else {
                        Err("non-finite marginal value".to_string())
                    }
                });
            (b, fit_seed, curves)
        })
        .collect();

    let mut per_query: Vec<CurveEnsemble> = queries
        .iter()
        .map(|q| CurveEnsemble {
            query: q.clone(),
            curves: Vec::new(),
            replica_seeds: Vec::new(),
            failed: Vec::new(),
        })
        .collect();
    let mut successes = 0;
    for (b, fit_seed, outcome) in results {
        match outcome {
            Ok(curve_set) => {
                successes += 1;
                for (ensemble, mean) in per_query.iter_mut().zip(curve_set) {
                    ensemble.curves.push(mean);
                    ensemble.replica_seeds.push(fit_seed);
                }
            }
            Err(reason) => {
                for ensemble in per_query.iter_mut() {
                    ensemble.failed.push((b, reason.clone()));
                }
            }
        }
    }
    if successes == 0 {
        return Err(BootstrapError::AllReplicasFailed(config.iterations));
    }
    Ok(per_query)
}

/// Pointwise empirical envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
}

/// Pointwise empirical quantile band at the given level.
///
/// Quantiles interpolate linearly between order statistics at position
/// `1 + q (B - 1)` (1-indexed).
pub fn empirical_band(
    ensemble: &CurveEnsemble,
    level: f64,
) -> Result<ConfidenceBand, BootstrapError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(BootstrapError::BadLevel(level));
    }
    if ensemble.curves.is_empty() {
        return Err(BootstrapError::EmptyEnsemble);
    }
    let len = ensemble.curves[0].len();
    let q_low = (1.0 - level) / 2.0;
    let q_high = 1.0 - q_low;
    let mut lower = Vec::with_capacity(len);
    let mut upper = Vec::with_capacity(len);
    let mut column: Vec<f64> = Vec::with_capacity(ensemble.curves.len());
    for point in 0..len {
        column.clear();
        column.extend(ensemble.curves.iter().map(|c| c[point]));
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lower.push(order_statistic_quantile(&column, q_low));
        upper.push(order_statistic_quantile(&column, q_high));
    }
    Ok(ConfidenceBand {
        lower,
        upper,
        level,
    })
}

/// Linear interpolation between order statistics of a sorted sample.
pub fn order_statistic_quantile(sorted: &[f64], q: f64) -> f64 {
    let b = sorted.len();
    debug_assert!(b >= 1);
    let position = q * (b - 1) as f64;
    let lo = position.floor() as usize;
    let hi = position.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let frac = position - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}
