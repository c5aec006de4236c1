//! Alternating block minimization of the penalized objective.
//!
//! The objective is quadratic in each factor matrix with the others held
//! fixed, so a sweep cycles over covariates and replaces each V(l) by the
//! exact minimizer of the full objective over that block, obtained from one
//! dense symmetric linear system. Singular systems fall back to the
//! minimum-norm solution and set a report flag.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::assign::{categorical_assign, grid_assign, prototypal_assign, AssignmentMatrix};
use crate::dataset::{ColumnData, CovariateSpec, Dataset};
use crate::error::FitError;
use crate::linalg::solve_sym;
use crate::model::{
    aca_objective, loadings, penalty_for_basis, AcaFitConfig, AcaModel, FactorMatrix, Feature,
    FeatureBasis, FitReport,
};

/// Exact minimizer of the full objective over covariate `l`'s factor matrix,
/// with all other factors fixed.
///
/// Beyond the data term and this covariate's own penalty, the other
/// covariates' penalties reach V(l) through their norm pre-factors; they
/// contribute a ridge term per component, and are required for the update
/// to be the exact block minimizer. Returns the new factors and whether the
/// system was singular (minimum-norm solve).
pub fn solve_block(
    l: usize,
    model: &AcaModel,
    x: &[f64],
    alphas: &[AssignmentMatrix],
) -> Result<(FactorMatrix, bool), FitError> {
    if l >= model.n_covariates() {
        return Err(FitError::ShapeMismatch(format!(
            "block index {l} out of range ({} covariates)",
            model.n_covariates()
        )));
    }
    // reuse the objective's shape validation
    let _ = aca_objective(model, x, alphas)?;

    let m = x.len();
    let d = model.components();
    let n_cov = model.n_covariates();
    let j = model.factors[l].rows();
    let n = j * d;
    let lambdas = model.config.lambdas(n_cov);

    // G_i^k = prod_{b != l} W(b)_i^k
    let mut g = Array2::<f64>::from_elem((m, d), 1.0);
    for b in 0..n_cov {
        if b == l {
            continue;
        }
        let wb = loadings(&alphas[b], &model.factors[b]);
        for i in 0..m {
            for k in 0..d {
                g[[i, k]] *= wb[[i, k]];
            }
        }
    }

    // Normal equations over the (k, j) unknowns, k-major.
    let mut mat = Array2::<f64>::zeros((n, n));
    let mut rhs = Array1::<f64>::zeros(n);
    let alpha = &alphas[l].entries;
    let mut nz: Vec<(usize, f64)> = Vec::with_capacity(j);
    for i in 0..m {
        nz.clear();
        for jj in 0..j {
            let a = alpha[[i, jj]];
            if a != 0.0 {
                nz.push((jj, a));
            }
        }
        for k in 0..d {
            let gik = g[[i, k]];
            if gik == 0.0 {
                continue;
            }
            for &(jj, aij) in &nz {
                let row_idx = k * j + jj;
                rhs[row_idx] += aij * gik * x[i];
                for k2 in 0..d {
                    let gik2 = g[[i, k2]];
                    if gik2 == 0.0 {
                        continue;
                    }
                    for &(jj2, aij2) in &nz {
                        mat[[row_idx, k2 * j + jj2]] += aij * aij2 * gik * gik2;
                    }
                }
            }
        }
    }

    // Squared column norms of the other factors.
    let norms: Vec<Vec<f64>> = (0..n_cov)
        .map(|b| {
            (0..d)
                .map(|k| {
                    model.factors[b]
                        .entries
                        .column(k)
                        .iter()
                        .map(|v| v * v)
                        .sum()
                })
                .collect()
        })
        .collect();

    for k in 0..d {
        // own penalty: lambda_l prod_{b != l} ||V(b)^k||^2 * C^l
        let mut prefactor = lambdas[l];
        for (b, nb) in norms.iter().enumerate() {
            if b != l {
                prefactor *= nb[k];
            }
        }
        if prefactor != 0.0 {
            let c = &model.penalties[l].entries;
            for a in 0..j {
                for b in 0..j {
                    mat[[k * j + a, k * j + b]] += prefactor * c[[a, b]];
                }
            }
        }
        // other covariates' penalties: ridge through this block's norm
        let mut ridge = 0.0;
        for lp in 0..n_cov {
            if lp == l || lambdas[lp] == 0.0 {
                continue;
            }
            let mut pre = lambdas[lp];
            for (b, nb) in norms.iter().enumerate() {
                if b != l && b != lp {
                    pre *= nb[k];
                }
            }
            let col = model.factors[lp].entries.column(k).to_owned();
            ridge += pre * model.penalties[lp].quad(&col);
        }
        if ridge != 0.0 {
            for a in 0..j {
                mat[[k * j + a, k * j + a]] += ridge;
            }
        }
    }

    let sol = solve_sym(&mat, &rhs);
    let mut entries = Array2::<f64>::zeros((j, d));
    for k in 0..d {
        for jj in 0..j {
            entries[[jj, k]] = sol.x[k * j + jj];
        }
    }
    Ok((FactorMatrix { entries }, sol.rank_deficient))
}

/// Fit factors by alternating block minimization.
///
/// Factors start from seeded uniform noise on [-init_scale, init_scale];
/// sweeps cycle over covariates, each update is kept only if it does not
/// increase the objective, and the fit stops when the relative
/// per-sweep objective drop falls below `tol` or `max_sweeps` is reached.
/// Deterministic given the seed.
pub fn aca_fit(
    x: &[f64],
    alphas: &[AssignmentMatrix],
    features: &[Feature],
    config: &AcaFitConfig,
) -> Result<(AcaModel, FitReport), FitError> {
    if x.is_empty() {
        return Err(FitError::EmptyData);
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(FitError::NonFiniteResponse(i));
    }
    if features.is_empty() || alphas.is_empty() {
        return Err(FitError::NoCovariates);
    }
    if features.len() != alphas.len() {
        return Err(FitError::ShapeMismatch(format!(
            "{} features but {} assignment matrices",
            features.len(),
            alphas.len()
        )));
    }
    config.validate(features.len())?;
    for (f, a) in features.iter().zip(alphas) {
        if f.basis.size() != a.columns() {
            return Err(FitError::ShapeMismatch(format!(
                "feature `{}` has {} columns, assignment has {}",
                f.name,
                f.basis.size(),
                a.columns()
            )));
        }
    }

    let d = config.components;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let s = config.init_scale;
    let factors: Vec<FactorMatrix> = features
        .iter()
        .map(|f| {
            let rows = f.basis.size();
            let mut entries = Array2::<f64>::zeros((rows, d));
            for jj in 0..rows {
                for k in 0..d {
                    entries[[jj, k]] = rng.random_range(-s..s);
                }
            }
            FactorMatrix { entries }
        })
        .collect();
    let penalties = features
        .iter()
        .map(|f| penalty_for_basis(&f.basis))
        .collect();

    let mut model = AcaModel {
        features: features.to_vec(),
        factors,
        penalties,
        config: config.clone(),
    };

    let n_cov = model.n_covariates();
    let mut objective = aca_objective(&model, x, alphas)?;
    let mut trace = vec![objective];
    let mut converged = false;
    let mut rank_deficient = false;
    let mut sweeps_run = 0;

    for _sweep in 0..config.max_sweeps {
        sweeps_run += 1;
        for l in 0..n_cov {
            let (candidate, deficient) = solve_block(l, &model, x, alphas)?;
            let previous = std::mem::replace(&mut model.factors[l], candidate);
            let new_objective = aca_objective(&model, x, alphas)?;
            if new_objective <= objective && new_objective.is_finite() {
                objective = new_objective;
                rank_deficient |= deficient;
            } else {
                // numerically stalled block; keep the previous factors
                model.factors[l] = previous;
            }
        }
        let previous = *trace.last().expect("trace is non-empty");
        trace.push(objective);
        if previous - objective <= config.tol * previous.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }

    Ok((
        model,
        FitReport {
            objective_trace: trace,
            sweeps_run,
            converged,
            rank_deficient,
        },
    ))
}

/// Assignment matrices and model features for every covariate of a dataset.
///
/// Real grids and categorical levels come straight from the covariate
/// specs; prototyped covariates run prototypal analysis on the non-missing
/// values (seeded per covariate), with prototypes sorted along their first
/// coordinate so the chain penalty connects neighbors.
pub fn dataset_assignments(
    dataset: &Dataset,
    seed: u64,
) -> Result<(Vec<Feature>, Vec<AssignmentMatrix>), FitError> {
    let mut features = Vec::with_capacity(dataset.covariates.len());
    let mut alphas = Vec::with_capacity(dataset.covariates.len());
    for (l, cov) in dataset.covariates.iter().enumerate() {
        let (basis, alpha) = match (&cov.spec, &cov.data) {
            (CovariateSpec::Categorical { levels }, ColumnData::Labels(values)) => {
                let alpha = categorical_assign(values, levels)?;
                (
                    FeatureBasis::Categorical {
                        levels: levels.clone(),
                    },
                    alpha,
                )
            }
            (CovariateSpec::RealGrid { nodes, units }, ColumnData::Real(values)) => {
                let alpha = grid_assign(values, nodes)?;
                (
                    FeatureBasis::Grid {
                        nodes: nodes.clone(),
                        units: units.clone(),
                    },
                    alpha,
                )
            }
            (
                CovariateSpec::Prototyped {
                    count,
                    locality_penalty,
                },
                ColumnData::Real(values),
            ) => {
                let proto_seed = seed.wrapping_add((l as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                prototyped_column(values, *count, *locality_penalty, proto_seed)?
            }
            _ => {
                return Err(FitError::ShapeMismatch(format!(
                    "covariate `{}`: spec does not match column data",
                    cov.name
                )))
            }
        };
        features.push(Feature {
            name: cov.name.clone(),
            basis,
        });
        alphas.push(alpha);
    }
    Ok((features, alphas))
}

fn prototyped_column(
    values: &[Option<f64>],
    count: usize,
    locality_penalty: f64,
    seed: u64,
) -> Result<(FeatureBasis, AssignmentMatrix), FitError> {
    let observed: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.filter(|v| v.is_finite()).map(|v| (i, v)))
        .collect();
    if observed.is_empty() {
        return Err(FitError::Assign(crate::error::AssignError::AllMissing));
    }
    let points: Vec<Vec<f64>> = observed.iter().map(|(_, v)| vec![*v]).collect();
    let count = count.min(points.len());
    let (mut set, alpha_obs) = prototypal_assign(&points, count, locality_penalty, seed)?;

    // sort prototypes so adjacent columns are neighbors in value
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&a, &b| set.prototypes[a][0].partial_cmp(&set.prototypes[b][0]).unwrap());
    set.prototypes = order.iter().map(|&jj| set.prototypes[jj].clone()).collect();
    let mut weights = Array2::<f64>::zeros((set.weights.nrows(), count));
    for (new_col, &old_col) in order.iter().enumerate() {
        for i in 0..set.weights.nrows() {
            weights[[i, new_col]] = set.weights[[i, old_col]];
        }
    }
    set.weights = weights;

    // expand to all rows; missing rows get the uniform assignment
    let mut entries = Array2::<f64>::from_elem((values.len(), count), 1.0 / count as f64);
    for (obs_row, (orig_row, _)) in observed.iter().enumerate() {
        for (new_col, &old_col) in order.iter().enumerate() {
            entries[[*orig_row, new_col]] = alpha_obs.entries[[obs_row, old_col]];
        }
    }
    Ok((
        FeatureBasis::Prototypes { set },
        AssignmentMatrix {
            entries,
            column_meaning: crate::assign::ColumnMeaning::Prototypes(count),
        },
    ))
}

/// A fitted model together with its report and the assignment matrices of
/// the training data (needed for marginalization).
#[derive(Debug, Clone)]
pub struct AcaFitOutput {
    pub model: AcaModel,
    pub report: FitReport,
    pub alphas: Vec<AssignmentMatrix>,
}

/// Build assignments from the dataset and fit in one step.
pub fn fit_dataset(dataset: &Dataset, config: &AcaFitConfig) -> Result<AcaFitOutput, FitError> {
    let (features, alphas) = dataset_assignments(dataset, config.seed)?;
    let (model, report) = aca_fit(&dataset.x, &alphas, &features, config)?;
    Ok(AcaFitOutput {
        model,
        report,
        alphas,
    })
}
