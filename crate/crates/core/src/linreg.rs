//! Ordinary-least-squares baseline with the same marginalization interface
//! as the component model.
//!
//! Real covariates enter as single columns (missing values mean-imputed);
//! categorical covariates expand to one-hot columns with the first level as
//! the reference. Marginalization replaces excluded covariates by their
//! training means, which for one-hot columns are the level frequencies.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnData, CovariateValue, Dataset};
use crate::error::FitError;
use crate::linalg::solve_sym;
use crate::model::MarginalCurve;

/// One fitted covariate term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LinTerm {
    Real {
        name: String,
        coef: f64,
        /// Training mean, used for marginalization and missing values.
        mean: f64,
    },
    Categorical {
        name: String,
        levels: Vec<String>,
        /// Per-level coefficient; the reference (first) level is 0.
        coefs: Vec<f64>,
        /// Training frequency of each level.
        freqs: Vec<f64>,
    },
}

impl LinTerm {
    pub fn name(&self) -> &str {
        match self {
            LinTerm::Real { name, .. } => name,
            LinTerm::Categorical { name, .. } => name,
        }
    }

    /// Contribution when the covariate is averaged out.
    fn mean_contribution(&self) -> f64 {
        match self {
            LinTerm::Real { coef, mean, .. } => coef * mean,
            LinTerm::Categorical { coefs, freqs, .. } => {
                coefs.iter().zip(freqs).map(|(c, f)| c * f).sum()
            }
        }
    }

    /// Contribution at a concrete value.
    fn value_contribution(&self, value: &CovariateValue) -> Result<f64, FitError> {
        match (self, value) {
            (LinTerm::Real { coef, .. }, CovariateValue::Real(z)) => Ok(coef * z),
            (
                LinTerm::Categorical { levels, coefs, name, .. },
                CovariateValue::Label(label),
            ) => {
                let idx = levels.iter().position(|l| l == label).ok_or_else(|| {
                    FitError::UnknownCovariate(format!("label `{label}` not in `{name}` levels"))
                })?;
                Ok(coefs[idx])
            }
            (term, value) => Err(FitError::ShapeMismatch(format!(
                "value {value:?} does not match covariate `{}`",
                term.name()
            ))),
        }
    }
}

/// Fitted multiple linear regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub terms: Vec<LinTerm>,
    /// True when the design was rank-deficient and the minimum-norm
    /// solution was taken.
    pub rank_deficient: bool,
}

impl LinearModel {
    pub fn term(&self, name: &str) -> Result<&LinTerm, FitError> {
        self.terms
            .iter()
            .find(|t| t.name() == name)
            .ok_or_else(|| FitError::UnknownCovariate(name.to_string()))
    }
}

/// Fit by ordinary least squares on the dataset's covariates.
pub fn ols_fit(dataset: &Dataset) -> Result<LinearModel, FitError> {
    let m = dataset.m();
    if m == 0 {
        return Err(FitError::EmptyData);
    }

    // design columns and term skeletons
    let mut columns: Vec<Array1<f64>> = vec![Array1::ones(m)];
    let mut terms: Vec<LinTerm> = Vec::new();
    for cov in &dataset.covariates {
        match &cov.data {
            ColumnData::Real(values) => {
                let observed: Vec<f64> = values
                    .iter()
                    .flatten()
                    .copied()
                    .filter(|v| v.is_finite())
                    .collect();
                if observed.is_empty() {
                    return Err(FitError::ShapeMismatch(format!(
                        "covariate `{}` has no observed values",
                        cov.name
                    )));
                }
                let mean = observed.iter().sum::<f64>() / observed.len() as f64;
                let col: Array1<f64> = values
                    .iter()
                    .map(|v| v.filter(|x| x.is_finite()).unwrap_or(mean))
                    .collect();
                // stored mean over the imputed column, so the marginal
                // matches the design exactly
                let mean = col.sum() / m as f64;
                columns.push(col);
                terms.push(LinTerm::Real {
                    name: cov.name.clone(),
                    coef: 0.0,
                    mean,
                });
            }
            ColumnData::Labels(values) => {
                let levels: Vec<String> = match &cov.spec {
                    crate::dataset::CovariateSpec::Categorical { levels } => levels.clone(),
                    _ => {
                        return Err(FitError::ShapeMismatch(format!(
                            "covariate `{}`: label data without categorical spec",
                            cov.name
                        )))
                    }
                };
                // one-hot indicator per level; missing labels get level
                // frequencies (the column means)
                let mut indicators: Vec<Array1<f64>> =
                    levels.iter().map(|_| Array1::zeros(m)).collect();
                let mut missing_rows = Vec::new();
                for (i, v) in values.iter().enumerate() {
                    match v {
                        Some(label) => {
                            let idx = levels.iter().position(|l| l == label).ok_or_else(|| {
                                FitError::UnknownCovariate(format!(
                                    "label `{label}` not in `{}` levels",
                                    cov.name
                                ))
                            })?;
                            indicators[idx][i] = 1.0;
                        }
                        None => missing_rows.push(i),
                    }
                }
                let observed = (m - missing_rows.len()).max(1) as f64;
                let freqs_observed: Vec<f64> =
                    indicators.iter().map(|col| col.sum() / observed).collect();
                for &i in &missing_rows {
                    for (idx, col) in indicators.iter_mut().enumerate() {
                        col[i] = freqs_observed[idx];
                    }
                }
                let freqs: Vec<f64> = indicators.iter().map(|col| col.sum() / m as f64).collect();
                // reference level dropped from the design
                for col in indicators.into_iter().skip(1) {
                    columns.push(col);
                }
                terms.push(LinTerm::Categorical {
                    name: cov.name.clone(),
                    levels,
                    coefs: Vec::new(),
                    freqs,
                });
            }
        }
    }

    let p = columns.len();
    // normal equations
    let mut gram = Array2::<f64>::zeros((p, p));
    let mut rhs = Array1::<f64>::zeros(p);
    for a in 0..p {
        for b in a..p {
            let v = columns[a].dot(&columns[b]);
            gram[[a, b]] = v;
            gram[[b, a]] = v;
        }
        rhs[a] = columns[a]
            .iter()
            .zip(&dataset.x)
            .map(|(c, x)| c * x)
            .sum();
    }
    let sol = solve_sym(&gram, &rhs);

    let mut coef_iter = sol.x.iter().skip(1).copied();
    let intercept = sol.x[0];
    let terms: Vec<LinTerm> = terms
        .into_iter()
        .map(|t| match t {
            LinTerm::Real { name, mean, .. } => LinTerm::Real {
                name,
                coef: coef_iter.next().expect("design column per real term"),
                mean,
            },
            LinTerm::Categorical { name, levels, freqs, .. } => {
                let mut coefs = vec![0.0];
                for _ in 1..levels.len() {
                    coefs.push(coef_iter.next().expect("design column per level"));
                }
                LinTerm::Categorical {
                    name,
                    levels,
                    coefs,
                    freqs,
                }
            }
        })
        .collect();

    Ok(LinearModel {
        intercept,
        terms,
        rank_deficient: sol.rank_deficient,
    })
}

/// Per-sample predictions on a dataset, with missing values entering the
/// way the fit's design saw them: training mean for reals, level
/// frequencies for labels.
pub fn lm_predict_samples(model: &LinearModel, dataset: &Dataset) -> Result<Vec<f64>, FitError> {
    let m = dataset.m();
    let mut preds = vec![model.intercept; m];
    for term in &model.terms {
        let cov = dataset
            .covariate(term.name())
            .ok_or_else(|| FitError::UnknownCovariate(term.name().to_string()))?;
        match (&cov.data, term) {
            (ColumnData::Real(values), LinTerm::Real { coef, mean, .. }) => {
                for (p, v) in preds.iter_mut().zip(values) {
                    let z = v.filter(|x| x.is_finite()).unwrap_or(*mean);
                    *p += coef * z;
                }
            }
            (ColumnData::Labels(values), LinTerm::Categorical { levels, coefs, .. }) => {
                for (p, v) in preds.iter_mut().zip(values) {
                    match v {
                        Some(label) => {
                            let idx = levels.iter().position(|l| l == label).ok_or_else(|| {
                                FitError::UnknownCovariate(format!(
                                    "label `{label}` not in `{}` levels",
                                    term.name()
                                ))
                            })?;
                            *p += coefs[idx];
                        }
                        None => *p += term.mean_contribution(),
                    }
                }
            }
            _ => {
                return Err(FitError::ShapeMismatch(format!(
                    "covariate `{}` does not match its model term",
                    term.name()
                )))
            }
        }
    }
    Ok(preds)
}

/// Linear-form prediction at one value per covariate, in model order.
pub fn lm_predict(model: &LinearModel, z: &[CovariateValue]) -> Result<f64, FitError> {
    if z.len() != model.terms.len() {
        return Err(FitError::ShapeMismatch(format!(
            "{} values for {} covariates",
            z.len(),
            model.terms.len()
        )));
    }
    let mut value = model.intercept;
    for (term, v) in model.terms.iter().zip(z) {
        value += term.value_contribution(v)?;
    }
    Ok(value)
}

/// Marginal affine curve over the covariates in `h`; every excluded
/// covariate contributes its training-mean term. An empty subset yields the
/// constant curve at the fitted mean response.
pub fn lm_marginalize(
    model: &LinearModel,
    h: &[String],
    axes: &[Vec<CovariateValue>],
) -> Result<MarginalCurve, FitError> {
    if h.len() != axes.len() {
        return Err(FitError::ShapeMismatch(format!(
            "{} names but {} axes",
            h.len(),
            axes.len()
        )));
    }
    let member_terms: Vec<&LinTerm> = h
        .iter()
        .map(|name| model.term(name))
        .collect::<Result<_, _>>()?;
    if axes.iter().any(|a| a.is_empty()) {
        return Err(FitError::BadConfig("empty evaluation axis".into()));
    }

    let mut base = model.intercept;
    for term in &model.terms {
        if !h.iter().any(|name| name == term.name()) {
            base += term.mean_contribution();
        }
    }

    // per-axis contributions, then a row-major walk over the outer product
    let contribs: Vec<Vec<f64>> = member_terms
        .iter()
        .zip(axes)
        .map(|(term, axis)| {
            axis.iter()
                .map(|v| term.value_contribution(v))
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<_, _>>()?;

    let total: usize = axes.iter().map(|a| a.len()).product();
    let mut mean = Vec::with_capacity(total);
    let mut idx = vec![0_usize; axes.len()];
    for _ in 0..total {
        let mut value = base;
        for (t, &pi) in idx.iter().enumerate() {
            value += contribs[t][pi];
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
    use crate::dataset::{Covariate, CovariateSpec};

    fn real_covariate(name: &str, values: Vec<Option<f64>>) -> Covariate {
        let nodes = crate::assign::build_grid(&values, 3).unwrap();
        Covariate {
            name: name.into(),
            spec: CovariateSpec::RealGrid {
                nodes,
                units: "g".into(),
            },
            data: ColumnData::Real(values),
        }
    }

    fn dataset(x: Vec<f64>, covs: Vec<Covariate>) -> Dataset {
        Dataset::new(x, covs, "test").unwrap()
    }

    #[test]
    fn exact_two_point_line() {
        let ds = dataset(
            vec![1.0, 3.0],
            vec![real_covariate("z", vec![Some(0.0), Some(1.0)])],
        );
        let model = ols_fit(&ds).unwrap();
        assert!((model.intercept - 1.0).abs() < 1e-10);
        match &model.terms[0] {
            LinTerm::Real { coef, .. } => assert!((coef - 2.0).abs() < 1e-10),
            _ => panic!("expected real term"),
        }
    }

    #[test]
    fn constant_response_gives_zero_slopes() {
        let ds = dataset(
            vec![4.2; 5],
            vec![real_covariate(
                "z",
                vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0), Some(5.0)],
            )],
        );
        let model = ols_fit(&ds).unwrap();
        assert!((model.intercept - 4.2).abs() < 1e-9);
        match &model.terms[0] {
            LinTerm::Real { coef, .. } => assert!(coef.abs() < 1e-9),
            _ => unreachable!(),
        }
    }

    #[test]
    fn residuals_sum_to_zero() {
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).sin() * 12.0 + 5.0).collect();
        let z1: Vec<Option<f64>> = (0..20).map(|i| Some((i % 5) as f64)).collect();
        let z2: Vec<Option<f64>> = (0..20).map(|i| Some(((i * 3) % 7) as f64)).collect();
        let ds = dataset(
            x.clone(),
            vec![real_covariate("a", z1.clone()), real_covariate("b", z2.clone())],
        );
        let model = ols_fit(&ds).unwrap();
        let mut resid_sum = 0.0;
        for i in 0..20 {
            let pred = lm_predict(
                &model,
                &[
                    CovariateValue::Real(z1[i].unwrap()),
                    CovariateValue::Real(z2[i].unwrap()),
                ],
            )
            .unwrap();
            resid_sum += x[i] - pred;
        }
        assert!(resid_sum.abs() < 1e-8, "residual sum {resid_sum}");
    }

    #[test]
    fn predict_at_means_gives_mean_response() {
        let x: Vec<f64> = (0..15).map(|i| i as f64 * 1.5 - 3.0).collect();
        let z: Vec<Option<f64>> = (0..15).map(|i| Some(((i * 7) % 11) as f64)).collect();
        let ds = dataset(x.clone(), vec![real_covariate("a", z)]);
        let model = ols_fit(&ds).unwrap();
        let mean_z = match &model.terms[0] {
            LinTerm::Real { mean, .. } => *mean,
            _ => unreachable!(),
        };
        let pred = lm_predict(&model, &[CovariateValue::Real(mean_z)]).unwrap();
        let mean_x = x.iter().sum::<f64>() / x.len() as f64;
        assert!((pred - mean_x).abs() < 1e-8);
    }

    #[test]
    fn predict_examples() {
        let model = LinearModel {
            intercept: 1.0,
            terms: vec![LinTerm::Real {
                name: "z".into(),
                coef: 2.0,
                mean: 0.0,
            }],
            rank_deficient: false,
        };
        assert_eq!(
            lm_predict(&model, &[CovariateValue::Real(3.0)]).unwrap(),
            7.0
        );
        assert_eq!(
            lm_predict(&model, &[CovariateValue::Real(0.0)]).unwrap(),
            1.0
        );
        assert!(lm_predict(&model, &[]).is_err());
    }

    #[test]
    fn categorical_one_hot_reference_level() {
        // y differs by meal type only
        let x = vec![1.0, 1.0, 5.0, 5.0, 9.0, 9.0];
        let values: Vec<Option<String>> = ["a", "a", "b", "b", "c", "c"]
            .iter()
            .map(|s| Some((*s).to_string()))
            .collect();
        let ds = dataset(
            x,
            vec![Covariate {
                name: "cat".into(),
                spec: CovariateSpec::Categorical {
                    levels: vec!["a".into(), "b".into(), "c".into()],
                },
                data: ColumnData::Labels(values),
            }],
        );
        let model = ols_fit(&ds).unwrap();
        let pa = lm_predict(&model, &[CovariateValue::Label("a".into())]).unwrap();
        let pb = lm_predict(&model, &[CovariateValue::Label("b".into())]).unwrap();
        let pc = lm_predict(&model, &[CovariateValue::Label("c".into())]).unwrap();
        assert!((pa - 1.0).abs() < 1e-8);
        assert!((pb - 5.0).abs() < 1e-8);
        assert!((pc - 9.0).abs() < 1e-8);
        match &model.terms[0] {
            LinTerm::Categorical { coefs, .. } => assert_eq!(coefs[0], 0.0),
            _ => unreachable!(),
        }
    }

    #[test]
    fn rank_deficient_design_flags_min_norm() {
        // duplicated covariate makes the design singular
        let z: Vec<Option<f64>> = (0..6).map(|i| Some(i as f64)).collect();
        let ds = dataset(
            (0..6).map(|i| i as f64 * 2.0).collect(),
            vec![real_covariate("a", z.clone()), real_covariate("b", z)],
        );
        let model = ols_fit(&ds).unwrap();
        assert!(model.rank_deficient);
        // least squares still holds: the two coefficients split the slope
        let pred = lm_predict(
            &model,
            &[CovariateValue::Real(3.0), CovariateValue::Real(3.0)],
        )
        .unwrap();
        assert!((pred - 6.0).abs() < 1e-8);
    }

    #[test]
    fn marginal_full_subset_equals_predict() {
        let x: Vec<f64> = (0..10).map(|i| 3.0 + 0.5 * i as f64).collect();
        let z1: Vec<Option<f64>> = (0..10).map(|i| Some(i as f64)).collect();
        let z2: Vec<Option<f64>> = (0..10).map(|i| Some((i * i % 5) as f64)).collect();
        let ds = dataset(
            x,
            vec![real_covariate("a", z1), real_covariate("b", z2)],
        );
        let model = ols_fit(&ds).unwrap();
        let axes = vec![
            vec![CovariateValue::Real(1.0), CovariateValue::Real(2.0)],
            vec![CovariateValue::Real(0.0), CovariateValue::Real(3.0)],
        ];
        let curve = lm_marginalize(&model, &["a".into(), "b".into()], &axes).unwrap();
        let mut idx = 0;
        for va in &axes[0] {
            for vb in &axes[1] {
                let direct = lm_predict(&model, &[va.clone(), vb.clone()]).unwrap();
                assert!((curve.mean[idx] - direct).abs() < 1e-12);
                idx += 1;
            }
        }
    }

    #[test]
    fn marginal_excluded_covariates_use_training_means() {
        // 5-row hand case, checked against the formula directly
        let x = vec![2.0, 4.0, 5.0, 4.0, 7.0];
        let z1: Vec<Option<f64>> = vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0), Some(5.0)];
        let z2: Vec<Option<f64>> = vec![Some(0.0), Some(1.0), Some(0.0), Some(1.0), Some(0.0)];
        let z3: Vec<Option<f64>> = vec![Some(2.0), Some(2.0), Some(3.0), Some(3.0), Some(4.0)];
        let ds = dataset(
            x,
            vec![
                real_covariate("fat", z1),
                real_covariate("b", z2),
                real_covariate("c", z3),
            ],
        );
        let model = ols_fit(&ds).unwrap();
        let (b0, coefs, means): (f64, Vec<f64>, Vec<f64>) = {
            let mut cs = Vec::new();
            let mut ms = Vec::new();
            for t in &model.terms {
                match t {
                    LinTerm::Real { coef, mean, .. } => {
                        cs.push(*coef);
                        ms.push(*mean);
                    }
                    _ => unreachable!(),
                }
            }
            (model.intercept, cs, ms)
        };
        let axis = vec![CovariateValue::Real(1.5), CovariateValue::Real(4.5)];
        let curve = lm_marginalize(&model, &["fat".into()], &[axis]).unwrap();
        for (i, z) in [1.5, 4.5].iter().enumerate() {
            let by_hand = b0 + coefs[0] * z + coefs[1] * means[1] + coefs[2] * means[2];
            assert!((curve.mean[i] - by_hand).abs() < 1e-12);
        }
        // affine in the member: second difference of a 3-point eval is 0
        let axis3 = vec![
            CovariateValue::Real(1.0),
            CovariateValue::Real(2.0),
            CovariateValue::Real(3.0),
        ];
        let c3 = lm_marginalize(&model, &["fat".into()], &[axis3]).unwrap();
        let second_diff = c3.mean[2] - 2.0 * c3.mean[1] + c3.mean[0];
        assert!(second_diff.abs() < 1e-10);
    }

    #[test]
    fn marginal_empty_subset_is_the_sample_mean() {
        let x: Vec<f64> = (0..9).map(|i| (i as f64) * 1.1 - 2.0).collect();
        let z: Vec<Option<f64>> = (0..9).map(|i| Some(((i * 5) % 7) as f64)).collect();
        let ds = dataset(x.clone(), vec![real_covariate("a", z)]);
        let model = ols_fit(&ds).unwrap();
        let curve = lm_marginalize(&model, &[], &[]).unwrap();
        assert_eq!(curve.mean.len(), 1);
        let mean_x = x.iter().sum::<f64>() / x.len() as f64;
        assert!((curve.mean[0] - mean_x).abs() < 1e-8);
    }

    #[test]
    fn marginal_unknown_covariate_errors() {
        let ds = dataset(
            vec![1.0, 2.0],
            vec![real_covariate("a", vec![Some(0.0), Some(1.0)])],
        );
        let model = ols_fit(&ds).unwrap();
        assert!(matches!(
            lm_marginalize(&model, &["nope".into()], &[vec![CovariateValue::Real(0.0)]]),
            Err(FitError::UnknownCovariate(_))
        ));
    }

    #[test]
    fn shifting_response_moves_only_intercept() {
        let x: Vec<f64> = (0..12).map(|i| (i as f64).cos() * 5.0).collect();
        let z: Vec<Option<f64>> = (0..12).map(|i| Some((i % 4) as f64)).collect();
        let ds1 = dataset(x.clone(), vec![real_covariate("a", z.clone())]);
        let shifted: Vec<f64> = x.iter().map(|v| v + 17.5).collect();
        let ds2 = dataset(shifted, vec![real_covariate("a", z)]);
        let m1 = ols_fit(&ds1).unwrap();
        let m2 = ols_fit(&ds2).unwrap();
        assert!((m2.intercept - m1.intercept - 17.5).abs() < 1e-8);
        match (&m1.terms[0], &m2.terms[0]) {
            (LinTerm::Real { coef: c1, .. }, LinTerm::Real { coef: c2, .. }) => {
                assert!((c1 - c2).abs() < 1e-8)
            }
            _ => unreachable!(),
        }
    }
}
