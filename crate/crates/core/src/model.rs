//! The separable low-rank conditional-mean model.
//!
//! The estimate is a sum of d components, each the product over covariates
//! of a one-dimensional function represented by its values at category
//! levels, grid nodes, or prototypes:
//!
//! ```text
//! xhat(z) = sum_k  prod_l  sum_j  alpha(l)^j(z_l) V(l)_j^k
//! ```
//!
//! Fitting minimizes the squared data misfit plus per-covariate smoothness
//! penalties `lambda_l (prod_{b != l} ||V(b)^k||^2) V(l)^k' C^l V(l)^k`,
//! whose norm pre-factors make the objective invariant under rescalings of
//! the factors that preserve their product.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::assign::{grid_row, project_simplex, AssignmentMatrix, PrototypeSet};
use crate::dataset::{CovariateSpec, CovariateValue};
use crate::error::FitError;

/// Per-covariate factor matrix V(l), one row per category/node/prototype,
/// one column per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorMatrix {
    pub entries: Array2<f64>,
}

impl FactorMatrix {
    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn components(&self) -> usize {
        self.entries.ncols()
    }
}

/// Symmetric PSD smoothness/variance penalty C^l.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyMatrix {
    pub entries: Array2<f64>,
}

impl PenaltyMatrix {
    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    /// v' C v for one factor column.
    pub fn quad(&self, v: &Array1<f64>) -> f64 {
        let cv = self.entries.dot(v);
        v.dot(&cv)
    }
}

/// How a fitted covariate converts a query value into an assignment row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureBasis {
    Categorical { levels: Vec<String> },
    Grid { nodes: Vec<f64>, units: String },
    Prototypes { set: PrototypeSet },
}

impl FeatureBasis {
    /// Number of assignment columns (category levels, nodes, prototypes).
    pub fn size(&self) -> usize {
        match self {
            FeatureBasis::Categorical { levels } => levels.len(),
            FeatureBasis::Grid { nodes, .. } => nodes.len(),
            FeatureBasis::Prototypes { set } => set.prototypes.len(),
        }
    }

    /// The covariate spec this basis realizes.
    pub fn spec(&self) -> CovariateSpec {
        match self {
            FeatureBasis::Categorical { levels } => CovariateSpec::Categorical {
                levels: levels.clone(),
            },
            FeatureBasis::Grid { nodes, units } => CovariateSpec::RealGrid {
                nodes: nodes.clone(),
                units: units.clone(),
            },
            FeatureBasis::Prototypes { set } => CovariateSpec::Prototyped {
                count: set.prototypes.len(),
                locality_penalty: set.locality_penalty,
            },
        }
    }

    /// Assignment row for a single query value.
    pub fn row_for(&self, value: &CovariateValue) -> Result<Array1<f64>, FitError> {
        match (self, value) {
            (FeatureBasis::Categorical { levels }, CovariateValue::Label(label)) => {
                let col = levels.iter().position(|l| l == label).ok_or_else(|| {
                    FitError::UnknownCovariate(format!("label `{label}` not in levels"))
                })?;
                let mut row = Array1::zeros(levels.len());
                row[col] = 1.0;
                Ok(row)
            }
            (FeatureBasis::Grid { nodes, .. }, CovariateValue::Real(z)) => Ok(grid_row(*z, nodes)),
            (FeatureBasis::Prototypes { set }, CovariateValue::Real(z)) => {
                if set.prototypes.first().map(|p| p.len()) != Some(1) {
                    return Err(FitError::ShapeMismatch(
                        "scalar query against multi-dimensional prototypes".into(),
                    ));
                }
                Ok(Array1::from_vec(prototype_row(&[*z], set)))
            }
            (basis, value) => Err(FitError::ShapeMismatch(format!(
                "value {value:?} does not match basis {:?}",
                basis.spec()
            ))),
        }
    }
}

/// Assignment weights of one point against a fixed prototype set:
/// simplex-constrained least squares with the locality cost, solved by
/// projected gradient from the uniform row. Deterministic.
pub fn prototype_row(point: &[f64], set: &PrototypeSet) -> Vec<f64> {
    let j = set.prototypes.len();
    let lam = set.locality_penalty;
    let cost: Vec<f64> = set
        .prototypes
        .iter()
        .map(|y| {
            lam * y
                .iter()
                .zip(point)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .collect();
    let obj = |a: &[f64]| -> f64 {
        let mut v = 0.0;
        for (q, &zq) in point.iter().enumerate() {
            let mut r = zq;
            for (jj, w) in a.iter().enumerate() {
                r -= w * set.prototypes[jj][q];
            }
            v += r * r;
        }
        v + a.iter().zip(&cost).map(|(w, c)| w * c).sum::<f64>()
    };
    let mut a = vec![1.0 / j as f64; j];
    let mut current = obj(&a);
    let mut step = 1.0;
    for _ in 0..200 {
        let mut grad = cost.clone();
        for (q, &zq) in point.iter().enumerate() {
            let mut r = -zq;
            for (jj, w) in a.iter().enumerate() {
                r += w * set.prototypes[jj][q];
            }
            for (jj, g) in grad.iter_mut().enumerate() {
                *g += 2.0 * r * set.prototypes[jj][q];
            }
        }
        let mut moved = false;
        for _ in 0..40 {
            let cand: Vec<f64> = a.iter().zip(&grad).map(|(w, g)| w - step * g).collect();
            let cand = project_simplex(&cand);
            let cand_obj = obj(&cand);
            if cand_obj <= current {
                let delta: f64 = cand.iter().zip(&a).map(|(x, w)| (x - w).abs()).sum();
                a = cand;
                current = cand_obj;
                step *= 1.4;
                moved = delta >= 1e-14;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    a
}

/// A named covariate as seen by the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub basis: FeatureBasis,
}

/// Fit configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcaFitConfig {
    /// Number of components d.
    pub components: usize,
    /// Penalty strength shared by all covariates.
    pub lambda: f64,
    /// Optional per-covariate override of `lambda`.
    #[serde(default)]
    pub lambda_per: Option<Vec<f64>>,
    pub max_sweeps: usize,
    /// Relative objective-change threshold.
    pub tol: f64,
    pub seed: u64,
    /// Half-width of the uniform initialization range.
    pub init_scale: f64,
}

impl Default for AcaFitConfig {
    fn default() -> Self {
        AcaFitConfig {
            components: 2,
            lambda: 1.0,
            lambda_per: None,
            max_sweeps: 500,
            tol: 1e-8,
            seed: 0,
            init_scale: 0.1,
        }
    }
}

impl AcaFitConfig {
    pub fn validate(&self, n_covariates: usize) -> Result<(), FitError> {
        if self.components < 1 {
            return Err(FitError::BadConfig("components must be >= 1".into()));
        }
        if self.max_sweeps < 1 {
            return Err(FitError::BadConfig("max_sweeps must be >= 1".into()));
        }
        if !self.tol.is_finite() || self.tol <= 0.0 {
            return Err(FitError::BadConfig("tol must be > 0".into()));
        }
        if !self.init_scale.is_finite() || self.init_scale <= 0.0 {
            return Err(FitError::BadConfig("init_scale must be > 0".into()));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(FitError::BadConfig("lambda must be >= 0".into()));
        }
        if let Some(per) = &self.lambda_per {
            if per.len() != n_covariates {
                return Err(FitError::BadConfig(format!(
                    "lambda_per has {} entries for {} covariates",
                    per.len(),
                    n_covariates
                )));
            }
            if per.iter().any(|l| !l.is_finite() || *l < 0.0) {
                return Err(FitError::BadConfig("lambda_per entries must be >= 0".into()));
            }
        }
        Ok(())
    }

    /// Per-covariate penalty strengths.
    pub fn lambdas(&self, n_covariates: usize) -> Vec<f64> {
        match &self.lambda_per {
            Some(per) => per.clone(),
            None => vec![self.lambda; n_covariates],
        }
    }
}

/// A fitted model: per-covariate bases, factors and penalties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcaModel {
    pub features: Vec<Feature>,
    pub factors: Vec<FactorMatrix>,
    pub penalties: Vec<PenaltyMatrix>,
    pub config: AcaFitConfig,
}

impl AcaModel {
    pub fn n_covariates(&self) -> usize {
        self.features.len()
    }

    pub fn components(&self) -> usize {
        self.config.components
    }

    pub fn feature_index(&self, name: &str) -> Result<usize, FitError> {
        self.features
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| FitError::UnknownCovariate(name.to_string()))
    }

    pub fn check_consistent(&self) -> Result<(), FitError> {
        let d = self.config.components;
        for (l, f) in self.features.iter().enumerate() {
            let rows = f.basis.size();
            if self.factors[l].rows() != rows {
                return Err(FitError::ShapeMismatch(format!(
                    "factor for `{}` has {} rows, basis has {rows}",
                    f.name,
                    self.factors[l].rows()
                )));
            }
            if self.factors[l].components() != d {
                return Err(FitError::ShapeMismatch(format!(
                    "factor for `{}` has {} components, config says {d}",
                    f.name,
                    self.factors[l].components()
                )));
            }
            if self.penalties[l].size() != rows {
                return Err(FitError::ShapeMismatch(format!(
                    "penalty for `{}` has size {}, basis has {rows}",
                    f.name,
                    self.penalties[l].size()
                )));
            }
        }
        Ok(())
    }
}

/// Sweep-by-sweep record of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub objective_trace: Vec<f64>,
    pub sweeps_run: usize,
    pub converged: bool,
    /// True when a singular block system was solved in the minimum-norm
    /// sense at least once.
    pub rank_deficient: bool,
}

/// Smoothness/variance penalty for a covariate representation.
///
/// Real grids and prototype chains penalize squared second differences
/// (first differences when fewer than 3 columns exist); categorical
/// covariates use the centering matrix, bounding the variance a level
/// pattern can explain. A single-column covariate has zero penalty.
pub fn penalty_matrix(spec: &CovariateSpec) -> PenaltyMatrix {
    match spec {
        CovariateSpec::Categorical { levels } => categorical_penalty(levels.len()),
        CovariateSpec::RealGrid { nodes, .. } => difference_penalty(nodes),
        CovariateSpec::Prototyped { count, .. } => {
            let unit_nodes: Vec<f64> = (0..*count).map(|j| j as f64).collect();
            difference_penalty(&unit_nodes)
        }
    }
}

pub(crate) fn penalty_for_basis(basis: &FeatureBasis) -> PenaltyMatrix {
    penalty_matrix(&basis.spec())
}

fn categorical_penalty(j: usize) -> PenaltyMatrix {
    let mut entries = Array2::<f64>::eye(j);
    let w = 1.0 / j as f64;
    for a in 0..j {
        for b in 0..j {
            entries[[a, b]] -= w;
        }
    }
    PenaltyMatrix { entries }
}

fn difference_penalty(nodes: &[f64]) -> PenaltyMatrix {
    let j = nodes.len();
    if j < 2 {
        return PenaltyMatrix {
            entries: Array2::zeros((j, j)),
        };
    }
    let d = if j >= 3 {
        // (j-2) x j second-difference operator; rows annihilate linears on
        // any node spacing.
        let mut d = Array2::<f64>::zeros((j - 2, j));
        for r in 0..j - 2 {
            let h1 = nodes[r + 1] - nodes[r];
            let h2 = nodes[r + 2] - nodes[r + 1];
            d[[r, r]] = 2.0 / (h1 * (h1 + h2));
            d[[r, r + 1]] = -2.0 / (h1 * h2);
            d[[r, r + 2]] = 2.0 / (h2 * (h1 + h2));
        }
        d
    } else {
        let mut d = Array2::<f64>::zeros((1, 2));
        let h = nodes[1] - nodes[0];
        d[[0, 0]] = -1.0 / h;
        d[[0, 1]] = 1.0 / h;
        d
    };
    PenaltyMatrix {
        entries: d.t().dot(&d),
    }
}

/// Per-covariate loadings W(l) = alpha(l) V(l), an m x d matrix.
pub(crate) fn loadings(alpha: &AssignmentMatrix, factors: &FactorMatrix) -> Array2<f64> {
    alpha.entries.dot(&factors.entries)
}

fn check_objective_shapes(
    model: &AcaModel,
    x: &[f64],
    alphas: &[AssignmentMatrix],
) -> Result<(), FitError> {
    model.check_consistent()?;
    if alphas.len() != model.n_covariates() {
        return Err(FitError::ShapeMismatch(format!(
            "{} assignment matrices for {} covariates",
            alphas.len(),
            model.n_covariates()
        )));
    }
    for (l, a) in alphas.iter().enumerate() {
        if a.rows() != x.len() {
            return Err(FitError::ShapeMismatch(format!(
                "assignment {l} has {} rows, response has {}",
                a.rows(),
                x.len()
            )));
        }
        if a.columns() != model.factors[l].rows() {
            return Err(FitError::ShapeMismatch(format!(
                "assignment {l} has {} columns, factor has {} rows",
                a.columns(),
                model.factors[l].rows()
            )));
        }
    }
    Ok(())
}

/// Full penalized objective: squared misfit plus rescaling-invariant
/// smoothness penalties.
pub fn aca_objective(
    model: &AcaModel,
    x: &[f64],
    alphas: &[AssignmentMatrix],
) -> Result<f64, FitError> {
    check_objective_shapes(model, x, alphas)?;
    let m = x.len();
    let d = model.components();
    let n_cov = model.n_covariates();
    let lambdas = model.config.lambdas(n_cov);

    let w: Vec<Array2<f64>> = (0..n_cov)
        .map(|l| loadings(&alphas[l], &model.factors[l]))
        .collect();

    let mut data = 0.0;
    for i in 0..m {
        let mut pred = 0.0;
        for k in 0..d {
            let mut prod = 1.0;
            for wl in &w {
                prod *= wl[[i, k]];
            }
            pred += prod;
        }
        let r = x[i] - pred;
        data += r * r;
    }

    // squared column norms and quadratic penalty terms per (l, k)
    let norms: Vec<Vec<f64>> = (0..n_cov)
        .map(|l| {
            (0..d)
                .map(|k| {
                    model.factors[l]
                        .entries
                        .column(k)
                        .iter()
                        .map(|v| v * v)
                        .sum()
                })
                .collect()
        })
        .collect();
    let quads: Vec<Vec<f64>> = (0..n_cov)
        .map(|l| {
            (0..d)
                .map(|k| {
                    let col = model.factors[l].entries.column(k).to_owned();
                    model.penalties[l].quad(&col)
                })
                .collect()
        })
        .collect();

    let mut penalty = 0.0;
    for l in 0..n_cov {
        if lambdas[l] == 0.0 {
            continue;
        }
        for k in 0..d {
            let mut prefactor = 1.0;
            for (b, n) in norms.iter().enumerate() {
                if b != l {
                    prefactor *= n[k];
                }
            }
            penalty += lambdas[l] * prefactor * quads[l][k];
        }
    }
    Ok(data + penalty)
}

/// Conditional-mean prediction from one assignment row per covariate.
pub fn aca_predict(model: &AcaModel, alpha_rows: &[Array1<f64>]) -> Result<f64, FitError> {
    if alpha_rows.len() != model.n_covariates() {
        return Err(FitError::ShapeMismatch(format!(
            "{} rows for {} covariates",
            alpha_rows.len(),
            model.n_covariates()
        )));
    }
    let d = model.components();
    let mut value = 0.0;
    for k in 0..d {
        let mut prod = 1.0;
        for (l, row) in alpha_rows.iter().enumerate() {
            if row.len() != model.factors[l].rows() {
                return Err(FitError::ShapeMismatch(format!(
                    "row {l} has {} entries, factor has {} rows",
                    row.len(),
                    model.factors[l].rows()
                )));
            }
            prod *= row.dot(&model.factors[l].entries.column(k));
        }
        value += prod;
    }
    Ok(value)
}

/// Per-sample predictions over whole assignment matrices.
pub fn predict_samples(
    model: &AcaModel,
    alphas: &[AssignmentMatrix],
) -> Result<Vec<f64>, FitError> {
    if alphas.len() != model.n_covariates() {
        return Err(FitError::ShapeMismatch(format!(
            "{} assignment matrices for {} covariates",
            alphas.len(),
            model.n_covariates()
        )));
    }
    let m = alphas.first().map(|a| a.rows()).unwrap_or(0);
    let d = model.components();
    let w: Vec<Array2<f64>> = (0..model.n_covariates())
        .map(|l| loadings(&alphas[l], &model.factors[l]))
        .collect();
    let mut preds = Vec::with_capacity(m);
    for i in 0..m {
        let mut value = 0.0;
        for k in 0..d {
            let mut prod = 1.0;
            for wl in &w {
                prod *= wl[[i, k]];
            }
            value += prod;
        }
        preds.push(value);
    }
    Ok(preds)
}

/// Prediction at raw covariate values, converted through each basis.
pub fn predict_values(model: &AcaModel, values: &[CovariateValue]) -> Result<f64, FitError> {
    if values.len() != model.n_covariates() {
        return Err(FitError::ShapeMismatch(format!(
            "{} values for {} covariates",
            values.len(),
            model.n_covariates()
        )));
    }
    let rows: Vec<Array1<f64>> = model
        .features
        .iter()
        .zip(values)
        .map(|(f, v)| f.basis.row_for(v))
        .collect::<Result<_, _>>()?;
    aca_predict(model, &rows)
}

/// A mean-response curve over a grid of query values, one axis per
/// marginalized-onto covariate; `mean` is laid out row-major over the axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalCurve {
    pub names: Vec<String>,
    pub axes: Vec<Vec<CovariateValue>>,
    pub mean: Vec<f64>,
}

impl MarginalCurve {
    /// For a single-covariate curve over a real axis: (eval points, means).
    pub fn real_axis(&self) -> Option<(Vec<f64>, &[f64])> {
        if self.axes.len() != 1 {
            return None;
        }
        let xs: Option<Vec<f64>> = self.axes[0].iter().map(|v| v.as_real()).collect();
        xs.map(|xs| (xs, self.mean.as_slice()))
    }

    /// Piecewise-linear evaluation of a single-covariate real curve,
    /// clamped to the eval range.
    pub fn eval_real(&self, z: f64) -> Option<f64> {
        let (xs, ys) = self.real_axis()?;
        Some(interp_clamped(&xs, ys, z))
    }

    /// Value at a single-covariate categorical curve's level.
    pub fn eval_label(&self, label: &str) -> Option<f64> {
        if self.axes.len() != 1 {
            return None;
        }
        self.axes[0]
            .iter()
            .position(|v| matches!(v, CovariateValue::Label(l) if l == label))
            .map(|i| self.mean[i])
    }

    /// Mean of the curve values; the value assigned to a missing query.
    pub fn average(&self) -> f64 {
        if self.mean.is_empty() {
            return f64::NAN;
        }
        self.mean.iter().sum::<f64>() / self.mean.len() as f64
    }
}

/// Linear interpolation on a sorted axis, clamped at the ends.
pub fn interp_clamped(xs: &[f64], ys: &[f64], z: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    debug_assert!(!xs.is_empty());
    if z <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if z >= xs[last] {
        return ys[last];
    }
    let mut seg = 0;
    while seg + 1 < xs.len() && xs[seg + 1] < z {
        seg += 1;
    }
    let (x0, x1) = (xs[seg], xs[seg + 1]);
    if x1 == x0 {
        return ys[seg];
    }
    let t = (z - x0) / (x1 - x0);
    ys[seg] + t * (ys[seg + 1] - ys[seg])
}

/// Marginal dependence of the fitted mean on the covariate subset `h`:
/// the per-sample loadings of every other covariate are averaged over the
/// fitted data, then multiplied by the query loadings for the members of
/// `h` and summed over components.
pub fn aca_marginalize(
    model: &AcaModel,
    alphas: &[AssignmentMatrix],
    h: &[String],
    axes: &[Vec<CovariateValue>],
) -> Result<MarginalCurve, FitError> {
    if h.is_empty() {
        return Err(FitError::BadConfig("marginal subset must be non-empty".into()));
    }
    if h.len() != axes.len() {
        return Err(FitError::ShapeMismatch(format!(
            "{} names but {} axes",
            h.len(),
            axes.len()
        )));
    }
    let indices: Vec<usize> = h
        .iter()
        .map(|name| model.feature_index(name))
        .collect::<Result<_, _>>()?;
    {
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != indices.len() {
            return Err(FitError::BadConfig("duplicate covariate in subset".into()));
        }
    }
    if alphas.len() != model.n_covariates() {
        return Err(FitError::ShapeMismatch(format!(
            "{} assignment matrices for {} covariates",
            alphas.len(),
            model.n_covariates()
        )));
    }
    let m = alphas.first().map(|a| a.rows()).unwrap_or(0);
    if m == 0 {
        return Err(FitError::EmptyData);
    }
    let d = model.components();

    // bracket_k = (1/m) sum_i prod_{l not in h} W(l)_i^k
    let excluded: Vec<usize> = (0..model.n_covariates())
        .filter(|l| !indices.contains(l))
        .collect();
    let w_excluded: Vec<Array2<f64>> = excluded
        .iter()
        .map(|&l| loadings(&alphas[l], &model.factors[l]))
        .collect();
    let mut bracket = vec![0.0_f64; d];
    for (k, b) in bracket.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..m {
            let mut prod = 1.0;
            for wl in &w_excluded {
                prod *= wl[[i, k]];
            }
            acc += prod;
        }
        *b = acc / m as f64;
    }

    // Pre-compute query loadings per axis member: inner[t][point][k]
    let mut inner: Vec<Vec<Vec<f64>>> = Vec::with_capacity(indices.len());
    for (t, &l) in indices.iter().enumerate() {
        let mut per_point = Vec::with_capacity(axes[t].len());
        for value in &axes[t] {
            let row = model.features[l].basis.row_for(value)?;
            let loads: Vec<f64> = (0..d)
                .map(|k| row.dot(&model.factors[l].entries.column(k)))
                .collect();
            per_point.push(loads);
        }
        inner.push(per_point);
    }

    // Row-major walk over the axes' outer product.
    let total: usize = axes.iter().map(|a| a.len().max(1)).product();
    if axes.iter().any(|a| a.is_empty()) {
        return Err(FitError::BadConfig("empty evaluation axis".into()));
    }
    let mut mean = Vec::with_capacity(total);
    let mut idx = vec![0_usize; axes.len()];
    for _ in 0..total {
        let mut value = 0.0;
        for (k, br) in bracket.iter().enumerate() {
            let mut prod = *br;
            for (t, &pi) in idx.iter().enumerate() {
                prod *= inner[t][pi][k];
            }
            value += prod;
        }
        mean.push(value);
        for t in (0..idx.len()).rev() {
            idx[t] += 1;
            if idx[t] < axes[t].len() {
                break;
            }
            idx[t] = 0;
        }
    }

    Ok(MarginalCurve {
        names: h.to_vec(),
        axes: axes.to_vec(),
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn grid_basis(nodes: &[f64]) -> FeatureBasis {
        FeatureBasis::Grid {
            nodes: nodes.to_vec(),
            units: "g".into(),
        }
    }

    fn simple_model(factors: Vec<Array2<f64>>, bases: Vec<FeatureBasis>, d: usize) -> AcaModel {
        let features: Vec<Feature> = bases
            .into_iter()
            .enumerate()
            .map(|(l, basis)| Feature {
                name: format!("c{l}"),
                basis,
            })
            .collect();
        let penalties: Vec<PenaltyMatrix> =
            features.iter().map(|f| penalty_for_basis(&f.basis)).collect();
        AcaModel {
            features,
            factors: factors
                .into_iter()
                .map(|entries| FactorMatrix { entries })
                .collect(),
            penalties,
            config: AcaFitConfig {
                components: d,
                ..AcaFitConfig::default()
            },
        }
    }

    #[test]
    fn predict_indicator_selects_node_value() {
        let model = simple_model(
            vec![array![[1.0], [2.0], [3.0]]],
            vec![grid_basis(&[0.0, 1.0, 2.0])],
            1,
        );
        let v = aca_predict(&model, &[array![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(v, 2.0);
        let v = aca_predict(&model, &[array![0.5, 0.5, 0.0]]).unwrap();
        assert_eq!(v, 1.5);
    }

    #[test]
    fn predict_multiplies_across_covariates() {
        let model = simple_model(
            vec![array![[2.0]], array![[3.0]]],
            vec![grid_basis(&[0.0, 1.0]), grid_basis(&[0.0, 1.0])],
            1,
        );
        // single-node bases are impossible through build_grid, so build the
        // rows by hand against 1-row factors
        let v = aca_predict(&model, &[array![1.0], array![1.0]]).unwrap();
        assert_eq!(v, 6.0);
    }

    #[test]
    fn predict_shape_mismatch_errors() {
        let model = simple_model(
            vec![array![[1.0], [2.0]]],
            vec![grid_basis(&[0.0, 1.0])],
            1,
        );
        assert!(aca_predict(&model, &[array![1.0, 0.0, 0.0]]).is_err());
        assert!(aca_predict(&model, &[]).is_err());
    }

    #[test]
    fn categorical_penalty_two_levels() {
        let c = penalty_matrix(&CovariateSpec::Categorical {
            levels: vec!["a".into(), "b".into()],
        });
        let v = array![1.0, -1.0];
        assert!((c.quad(&v) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn grid_penalty_annihilates_constants_and_linears() {
        let nodes = [0.0, 10.0, 20.0, 30.0, 40.0];
        let c = penalty_matrix(&CovariateSpec::RealGrid {
            nodes: nodes.to_vec(),
            units: "g".into(),
        });
        let constant = Array1::from_elem(5, 3.7);
        assert!(c.quad(&constant).abs() < 1e-12);
        let linear = Array1::from_vec(nodes.iter().map(|n| 2.0 * n + 1.0).collect());
        assert!(c.quad(&linear).abs() < 1e-12);
        let quad_v = Array1::from_vec(nodes.iter().map(|n| n * n).collect());
        assert!(c.quad(&quad_v) > 0.0);
    }

    #[test]
    fn grid_penalty_nonuniform_annihilates_linears() {
        let nodes = [0.0, 1.0, 3.0, 7.0];
        let c = penalty_matrix(&CovariateSpec::RealGrid {
            nodes: nodes.to_vec(),
            units: "g".into(),
        });
        let linear = Array1::from_vec(nodes.iter().map(|n| -0.4 * n + 2.0).collect());
        assert!(c.quad(&linear).abs() < 1e-15);
    }

    #[test]
    fn two_node_grid_falls_back_to_first_difference() {
        let c = penalty_matrix(&CovariateSpec::RealGrid {
            nodes: vec![0.0, 2.0],
            units: "g".into(),
        });
        // D1 = (-0.5, 0.5); C = D1' D1
        let v = array![0.0, 2.0];
        assert!((c.quad(&v) - 1.0).abs() < 1e-12);
        let constant = array![5.0, 5.0];
        assert!(c.quad(&constant).abs() < 1e-12);
    }

    #[test]
    fn single_column_penalty_is_zero() {
        let c = penalty_matrix(&CovariateSpec::Categorical {
            levels: vec!["only".into()],
        });
        assert_eq!(c.size(), 1);
        assert!(c.entries[[0, 0]].abs() < 1e-15);
    }

    #[test]
    fn penalty_matrices_are_symmetric_psd() {
        use crate::linalg::sym_eigen;
        let specs = vec![
            CovariateSpec::Categorical {
                levels: vec!["a".into(), "b".into(), "c".into()],
            },
            CovariateSpec::RealGrid {
                nodes: vec![0.0, 1.0, 2.5, 4.0, 8.0],
                units: "g".into(),
            },
            CovariateSpec::Prototyped {
                count: 4,
                locality_penalty: 0.5,
            },
        ];
        for spec in specs {
            let c = penalty_matrix(&spec);
            let n = c.size();
            for a in 0..n {
                for b in 0..n {
                    assert!((c.entries[[a, b]] - c.entries[[b, a]]).abs() < 1e-12);
                }
            }
            let (vals, _) = sym_eigen(&c.entries);
            for v in vals.iter() {
                assert!(*v >= -1e-10, "negative eigenvalue {v}");
            }
        }
    }

    #[test]
    fn objective_zero_for_perfect_fit_without_penalty() {
        // one covariate, two nodes, x equals the node values
        let alphas = vec![crate::assign::grid_assign(&[Some(0.0), Some(1.0)], &[0.0, 1.0]).unwrap()];
        let mut model = simple_model(
            vec![array![[1.0], [2.0]]],
            vec![grid_basis(&[0.0, 1.0])],
            1,
        );
        model.config.lambda = 0.0;
        let x = vec![1.0, 2.0];
        let obj = aca_objective(&model, &x, &alphas).unwrap();
        assert!(obj.abs() < 1e-12);
    }

    #[test]
    fn objective_all_zero_factors_is_sum_of_squares() {
        let alphas = vec![crate::assign::grid_assign(&[Some(0.2), Some(0.7)], &[0.0, 1.0]).unwrap()];
        let model = simple_model(
            vec![Array2::zeros((2, 1))],
            vec![grid_basis(&[0.0, 1.0])],
            1,
        );
        let x = vec![3.0, -4.0];
        let obj = aca_objective(&model, &x, &alphas).unwrap();
        assert!((obj - 25.0).abs() < 1e-12);
    }

    #[test]
    fn marginal_average_and_eval_helpers() {
        let curve = MarginalCurve {
            names: vec!["carbs".into()],
            axes: vec![vec![
                CovariateValue::Real(0.0),
                CovariateValue::Real(10.0),
                CovariateValue::Real(20.0),
            ]],
            mean: vec![1.0, 3.0, 5.0],
        };
        assert_eq!(curve.eval_real(5.0), Some(2.0));
        assert_eq!(curve.eval_real(-1.0), Some(1.0));
        assert_eq!(curve.eval_real(25.0), Some(5.0));
        assert_eq!(curve.average(), 3.0);
    }
}
