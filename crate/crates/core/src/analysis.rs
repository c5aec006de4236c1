//! Evaluation metrics and decision-support extraction over marginal curves:
//! full and marginal RMSE, confidence-interval coverage, a nonlinearity
//! heuristic, and threshold-based range extraction.

use serde::{Deserialize, Serialize};

use crate::bootstrap::ConfidenceBand;
use crate::dataset::{ColumnData, Dataset};
use crate::error::AnalysisError;
use crate::model::MarginalCurve;

/// Root mean squared error of per-sample predictions.
pub fn rmse_full(predictions: &[f64], x: &[f64]) -> Result<f64, AnalysisError> {
    if predictions.len() != x.len() {
        return Err(AnalysisError::LengthMismatch(format!(
            "{} predictions for {} responses",
            predictions.len(),
            x.len()
        )));
    }
    if x.is_empty() {
        return Err(AnalysisError::LengthMismatch("empty input".into()));
    }
    let sum: f64 = predictions
        .iter()
        .zip(x)
        .map(|(p, v)| (p - v) * (p - v))
        .sum();
    Ok((sum / x.len() as f64).sqrt())
}

/// Evaluate a single-covariate curve at one sample's covariate value.
///
/// Real values interpolate linearly (clamped to the evaluation range),
/// labels look up their level, and missing values take the curve average,
/// matching the uniform soft assignment for missing data.
fn curve_value_at_sample(
    curve: &MarginalCurve,
    data: &ColumnData,
    i: usize,
) -> Result<f64, AnalysisError> {
    match data {
        ColumnData::Real(values) => match values[i] {
            Some(z) if z.is_finite() => curve
                .eval_real(z)
                .ok_or(AnalysisError::NotARealCurve),
            _ => Ok(curve.average()),
        },
        ColumnData::Labels(values) => match &values[i] {
            Some(label) => curve
                .eval_label(label)
                .ok_or_else(|| AnalysisError::MissingCurve(label.clone())),
            None => Ok(curve.average()),
        },
    }
}

/// Marginal RMSE: the average over curves of per-sample squared error,
/// each curve evaluated at the sample's value of its own covariate.
pub fn rmse_marginal(curves: &[MarginalCurve], dataset: &Dataset) -> Result<f64, AnalysisError> {
    if curves.is_empty() {
        return Err(AnalysisError::LengthMismatch("no curves".into()));
    }
    let m = dataset.m();
    let mut total = 0.0;
    for curve in curves {
        if curve.names.len() != 1 {
            return Err(AnalysisError::NotARealCurve);
        }
        let name = &curve.names[0];
        let cov = dataset
            .covariate(name)
            .ok_or_else(|| AnalysisError::MissingCurve(name.clone()))?;
        for i in 0..m {
            let fitted = curve_value_at_sample(curve, &cov.data, i)?;
            let r = fitted - dataset.x[i];
            total += r * r;
        }
    }
    Ok((total / (m as f64 * curves.len() as f64)).sqrt())
}

/// Coverage of the data by per-covariate confidence bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Percent of samples inside the band, per covariate curve.
    pub per_covariate: Vec<(String, f64)>,
    /// Unweighted mean of the per-covariate percentages.
    pub mean_pct: f64,
    /// Percent over all (covariate, sample) pairs pooled together.
    pub pooled_pct: f64,
}

/// Percentage of data points falling within each covariate's band, with
/// band bounds interpolated at the sample's covariate value.
pub fn ci_coverage(
    dataset: &Dataset,
    bands: &[(MarginalCurve, ConfidenceBand)],
) -> Result<CoverageReport, AnalysisError> {
    if bands.is_empty() {
        return Err(AnalysisError::LengthMismatch("no bands".into()));
    }
    let m = dataset.m();
    let mut per_covariate = Vec::with_capacity(bands.len());
    let mut pooled_inside = 0usize;
    for (curve, band) in bands {
        if curve.names.len() != 1 {
            return Err(AnalysisError::NotARealCurve);
        }
        if band.lower.len() != curve.mean.len() || band.upper.len() != curve.mean.len() {
            return Err(AnalysisError::LengthMismatch(format!(
                "band for `{}` does not match its curve",
                curve.names[0]
            )));
        }
        let name = &curve.names[0];
        let cov = dataset
            .covariate(name)
            .ok_or_else(|| AnalysisError::MissingCurve(name.clone()))?;
        let lower_curve = MarginalCurve {
            names: curve.names.clone(),
            axes: curve.axes.clone(),
            mean: band.lower.clone(),
        };
        let upper_curve = MarginalCurve {
            names: curve.names.clone(),
            axes: curve.axes.clone(),
            mean: band.upper.clone(),
        };
        let mut inside = 0usize;
        for i in 0..m {
            let lo = curve_value_at_sample(&lower_curve, &cov.data, i)?;
            let hi = curve_value_at_sample(&upper_curve, &cov.data, i)?;
            if dataset.x[i] >= lo && dataset.x[i] <= hi {
                inside += 1;
            }
        }
        pooled_inside += inside;
        per_covariate.push((name.clone(), 100.0 * inside as f64 / m as f64));
    }
    let mean_pct =
        per_covariate.iter().map(|(_, p)| p).sum::<f64>() / per_covariate.len() as f64;
    let pooled_pct = 100.0 * pooled_inside as f64 / (m * bands.len()) as f64;
    Ok(CoverageReport {
        per_covariate,
        mean_pct,
        pooled_pct,
    })
}

/// Maximum bend angle of a curve, after both axes rescale to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BendReport {
    pub max_bend_deg: f64,
    pub flagged: bool,
    pub threshold_deg: f64,
}

/// Default bend threshold in degrees.
pub const DEFAULT_BEND_DEG: f64 = 10.0;

/// Maximum absolute angle between successive chord segments of the curve,
/// measured after rescaling both axes to [0, 1]. A curve with zero response
/// range bends by 0.
pub fn detect_bend(curve: &MarginalCurve, threshold_deg: f64) -> Result<BendReport, AnalysisError> {
    let (xs, ys) = curve.real_axis().ok_or(AnalysisError::NotARealCurve)?;
    if xs.len() < 3 {
        return Err(AnalysisError::TooFewPoints {
            required: 3,
            got: xs.len(),
        });
    }
    let x_lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let y_lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let y_hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let x_range = x_hi - x_lo;
    let y_range = y_hi - y_lo;
    if x_range <= 0.0 {
        return Err(AnalysisError::NotARealCurve);
    }
    if y_range <= 0.0 {
        return Ok(BendReport {
            max_bend_deg: 0.0,
            flagged: false,
            threshold_deg,
        });
    }
    let nx: Vec<f64> = xs.iter().map(|x| (x - x_lo) / x_range).collect();
    let ny: Vec<f64> = ys.iter().map(|y| (y - y_lo) / y_range).collect();
    let mut max_bend: f64 = 0.0;
    for i in 0..nx.len() - 2 {
        let (dx1, dy1) = (nx[i + 1] - nx[i], ny[i + 1] - ny[i]);
        let (dx2, dy2) = (nx[i + 2] - nx[i + 1], ny[i + 2] - ny[i + 1]);
        let cross = dx1 * dy2 - dy1 * dx2;
        let dot = dx1 * dx2 + dy1 * dy2;
        let angle = cross.atan2(dot).abs().to_degrees();
        max_bend = max_bend.max(angle);
    }
    Ok(BendReport {
        max_bend_deg: max_bend,
        flagged: max_bend > threshold_deg,
        threshold_deg,
    })
}

/// Covariate intervals where the curve sits above/below a threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeSet {
    pub covariate: String,
    pub threshold: f64,
    pub above: Vec<(f64, f64)>,
    pub below: Vec<(f64, f64)>,
}

/// Intersect a piecewise-linear curve with a horizontal threshold.
///
/// Crossing points are computed exactly on each linear segment; intervals
/// where the mean exceeds the threshold go to `above`, below to `below`.
/// Stretches exactly at the threshold are boundaries and belong to neither.
pub fn extract_ranges(curve: &MarginalCurve, threshold: f64) -> Result<RangeSet, AnalysisError> {
    let (xs, ys) = curve.real_axis().ok_or(AnalysisError::NotARealCurve)?;
    if xs.is_empty() {
        return Err(AnalysisError::EmptyCurve);
    }

    // Maximal signed runs: sign > 0 above, < 0 below, 0 at the threshold.
    let mut runs: Vec<(f64, f64, i8)> = Vec::new();
    let mut push = |lo: f64, hi: f64, sign: i8| {
        if let Some(last) = runs.last_mut() {
            if last.2 == sign && last.1 == lo {
                last.1 = hi;
                return;
            }
        }
        runs.push((lo, hi, sign));
    };

    if xs.len() == 1 {
        let sign = sign_of(ys[0] - threshold);
        push(xs[0], xs[0], sign);
    }
    for seg in 0..xs.len().saturating_sub(1) {
        let (x0, x1) = (xs[seg], xs[seg + 1]);
        let d0 = ys[seg] - threshold;
        let d1 = ys[seg + 1] - threshold;
        let (s0, s1) = (sign_of(d0), sign_of(d1));
        if s0 == s1 {
            push(x0, x1, s0);
        } else if s0 == 0 {
            push(x0, x1, s1);
        } else if s1 == 0 {
            push(x0, x1, s0);
        } else {
            // strict sign change: exact crossing point on the segment
            let cross = x0 + d0 / (d0 - d1) * (x1 - x0);
            push(x0, cross, s0);
            push(cross, x1, s1);
        }
    }

    let mut above = Vec::new();
    let mut below = Vec::new();
    for (lo, hi, sign) in runs {
        match sign {
            1 => above.push((lo, hi)),
            -1 => below.push((lo, hi)),
            _ => {}
        }
    }
    Ok(RangeSet {
        covariate: curve.names[0].clone(),
        threshold,
        above,
        below,
    })
}

fn sign_of(d: f64) -> i8 {
    if d > 0.0 {
        1
    } else if d < 0.0 {
        -1
    } else {
        0
    }
}

/// Bundle of evaluation metrics for one fitted model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse_full: f64,
    pub rmse_marginal: f64,
    pub coverage: CoverageReport,
    pub bends: Vec<(String, BendReport)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Covariate, CovariateSpec, CovariateValue};

    fn real_curve(name: &str, xs: &[f64], ys: &[f64]) -> MarginalCurve {
        MarginalCurve {
            names: vec![name.to_string()],
            axes: vec![xs.iter().map(|x| CovariateValue::Real(*x)).collect()],
            mean: ys.to_vec(),
        }
    }

    #[test]
    fn rmse_full_examples() {
        assert_eq!(rmse_full(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let v = rmse_full(&[3.0, 4.0], &[0.0, 0.0]).unwrap();
        assert!((v - 12.5_f64.sqrt()).abs() < 1e-12);
        assert!(rmse_full(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rmse_marginal_single_covariate_reduces_to_full() {
        let values: Vec<Option<f64>> = vec![Some(0.0), Some(10.0), Some(20.0)];
        let ds = Dataset::new(
            vec![1.0, 2.0, 4.0],
            vec![Covariate {
                name: "z".into(),
                spec: CovariateSpec::RealGrid {
                    nodes: vec![0.0, 10.0, 20.0],
                    units: "g".into(),
                },
                data: ColumnData::Real(values),
            }],
            "t",
        )
        .unwrap();
        let curve = real_curve("z", &[0.0, 10.0, 20.0], &[1.5, 2.5, 3.5]);
        let marginal = rmse_marginal(std::slice::from_ref(&curve), &ds).unwrap();
        let preds = [1.5, 2.5, 3.5];
        let full = rmse_full(&preds, &ds.x).unwrap();
        assert!((marginal - full).abs() < 1e-12);
    }

    #[test]
    fn rmse_marginal_two_covariates_hand_case() {
        let ds = Dataset::new(
            vec![1.0, 2.0, 3.0],
            vec![
                Covariate {
                    name: "a".into(),
                    spec: CovariateSpec::RealGrid {
                        nodes: vec![0.0, 1.0],
                        units: "g".into(),
                    },
                    data: ColumnData::Real(vec![Some(0.0), Some(0.5), Some(1.0)]),
                },
                Covariate {
                    name: "b".into(),
                    spec: CovariateSpec::RealGrid {
                        nodes: vec![0.0, 2.0],
                        units: "g".into(),
                    },
                    data: ColumnData::Real(vec![Some(0.0), Some(1.0), Some(2.0)]),
                },
            ],
            "t",
        )
        .unwrap();
        let curve_a = real_curve("a", &[0.0, 1.0], &[1.0, 3.0]);
        let curve_b = real_curve("b", &[0.0, 2.0], &[2.0, 2.0]);
        // curve_a at (0, .5, 1) -> (1, 2, 3); residuals (0, 0, 0)
        // curve_b at (0, 1, 2)  -> (2, 2, 2); residuals (1, 0, -1)
        // total squared error = 2 over m*L = 6
        let v = rmse_marginal(&[curve_a, curve_b], &ds).unwrap();
        assert!((v - (2.0_f64 / 6.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn coverage_all_inside_and_all_outside() {
        let ds = Dataset::new(
            vec![1.0, 2.0],
            vec![Covariate {
                name: "z".into(),
                spec: CovariateSpec::RealGrid {
                    nodes: vec![0.0, 1.0],
                    units: "g".into(),
                },
                data: ColumnData::Real(vec![Some(0.0), Some(1.0)]),
            }],
            "t",
        )
        .unwrap();
        let curve = real_curve("z", &[0.0, 1.0], &[1.5, 1.5]);
        let wide = ConfidenceBand {
            lower: vec![0.0, 0.0],
            upper: vec![5.0, 5.0],
            level: 0.95,
        };
        let report = ci_coverage(&ds, &[(curve.clone(), wide)]).unwrap();
        assert_eq!(report.per_covariate[0].1, 100.0);
        assert_eq!(report.mean_pct, 100.0);
        let empty = ConfidenceBand {
            lower: vec![9.0, 9.0],
            upper: vec![9.0, 9.0],
            level: 0.95,
        };
        let report = ci_coverage(&ds, &[(curve, empty)]).unwrap();
        assert_eq!(report.per_covariate[0].1, 0.0);
        assert_eq!(report.pooled_pct, 0.0);
    }

    #[test]
    fn coverage_invariant_under_axis_reindexing() {
        // densifying the eval grid of an affine band leaves coverage alone
        let ds = Dataset::new(
            vec![0.5, 1.8, 3.1],
            vec![Covariate {
                name: "z".into(),
                spec: CovariateSpec::RealGrid {
                    nodes: vec![0.0, 4.0],
                    units: "g".into(),
                },
                data: ColumnData::Real(vec![Some(0.5), Some(2.0), Some(3.5)]),
            }],
            "t",
        )
        .unwrap();
        let coarse_curve = real_curve("z", &[0.0, 4.0], &[0.0, 4.0]);
        let coarse = ConfidenceBand {
            lower: vec![-0.5, 3.5],
            upper: vec![0.5, 4.5],
            level: 0.9,
        };
        let fine_xs: Vec<f64> = (0..9).map(|i| i as f64 * 0.5).collect();
        let fine_curve = real_curve("z", &fine_xs, &fine_xs);
        let fine = ConfidenceBand {
            lower: fine_xs.iter().map(|x| x - 0.5).collect(),
            upper: fine_xs.iter().map(|x| x + 0.5).collect(),
            level: 0.9,
        };
        let r1 = ci_coverage(&ds, &[(coarse_curve, coarse)]).unwrap();
        let r2 = ci_coverage(&ds, &[(fine_curve, fine)]).unwrap();
        assert_eq!(r1.per_covariate[0].1, r2.per_covariate[0].1);
    }

    #[test]
    fn bend_straight_line_is_zero() {
        let xs: Vec<f64> = (0..11).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 7.0).collect();
        let report = detect_bend(&real_curve("z", &xs, &ys), 10.0).unwrap();
        assert!(report.max_bend_deg < 1e-9);
        assert!(!report.flagged);
    }

    #[test]
    fn bend_right_angle_polyline() {
        // normalized shape: flat then straight up
        let curve = real_curve("z", &[0.0, 1.0, 1.0 + 1e-9], &[0.0, 0.0, 1.0]);
        let report = detect_bend(&curve, 10.0).unwrap();
        assert!((report.max_bend_deg - 90.0).abs() < 1e-3);
        assert!(report.flagged);
    }

    #[test]
    fn bend_flat_curve_zero_even_with_noise_free_axis() {
        let xs: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let ys = vec![2.0; 5];
        let report = detect_bend(&real_curve("z", &xs, &ys), 10.0).unwrap();
        assert_eq!(report.max_bend_deg, 0.0);
    }

    #[test]
    fn bend_requires_three_points() {
        let curve = real_curve("z", &[0.0, 1.0], &[0.0, 1.0]);
        assert!(matches!(
            detect_bend(&curve, 10.0),
            Err(AnalysisError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn bend_invariant_under_affine_axis_rescaling() {
        let xs: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let r1 = detect_bend(&real_curve("z", &xs, &ys), 10.0).unwrap();
        let xs2: Vec<f64> = xs.iter().map(|x| 50.0 * x + 3.0).collect();
        let ys2: Vec<f64> = ys.iter().map(|y| -20.0 * y + 100.0).collect();
        let r2 = detect_bend(&real_curve("z", &xs2, &ys2), 10.0).unwrap();
        assert!((r1.max_bend_deg - r2.max_bend_deg).abs() < 1e-9);
    }

    #[test]
    fn ranges_entirely_below() {
        let curve = real_curve("z", &[0.0, 50.0, 100.0], &[1.0, 2.0, 3.0]);
        let set = extract_ranges(&curve, 10.0).unwrap();
        assert!(set.above.is_empty());
        assert_eq!(set.below, vec![(0.0, 100.0)]);
    }

    #[test]
    fn ranges_monotone_crossing_at_midpoint() {
        let curve = real_curve("z", &[0.0, 100.0], &[10.0, 90.0]);
        let set = extract_ranges(&curve, 50.0).unwrap();
        assert_eq!(set.below, vec![(0.0, 50.0)]);
        assert_eq!(set.above, vec![(50.0, 100.0)]);
    }

    #[test]
    fn ranges_two_crossings_disjoint_intervals() {
        // V shape dipping below the threshold in the middle
        let curve = real_curve("z", &[0.0, 50.0, 100.0], &[80.0, 0.0, 80.0]);
        let set = extract_ranges(&curve, 40.0).unwrap();
        assert_eq!(set.above.len(), 2);
        assert_eq!(set.below.len(), 1);
        let (lo, hi) = set.below[0];
        assert!((lo - 25.0).abs() < 1e-12);
        assert!((hi - 75.0).abs() < 1e-12);
        assert_eq!(set.above[0].0, 0.0);
        assert_eq!(set.above[1].1, 100.0);
    }

    #[test]
    fn ranges_point_exactly_at_threshold_is_boundary() {
        let curve = real_curve("z", &[0.0, 50.0, 100.0], &[20.0, 50.0, 20.0]);
        let set = extract_ranges(&curve, 50.0).unwrap();
        // curve touches the threshold at z = 50 but never exceeds it
        assert!(set.above.is_empty());
        assert_eq!(set.below, vec![(0.0, 100.0)]);
    }

    #[test]
    fn ranges_constant_at_threshold_belongs_to_neither() {
        let curve = real_curve("z", &[0.0, 100.0], &[50.0, 50.0]);
        let set = extract_ranges(&curve, 50.0).unwrap();
        assert!(set.above.is_empty());
        assert!(set.below.is_empty());
    }
}
