//! Row-stochastic assignment matrices.
//!
//! Each observation's covariate value is expressed as a convex combination
//! of category indicators, grid nodes, or learned prototypes. Missing values
//! map to the uniform row, the maximum-entropy soft assignment.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::AssignError;

/// What the columns of an assignment matrix stand for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnMeaning {
    Labels(Vec<String>),
    Nodes(Vec<f64>),
    Prototypes(usize),
}

/// m x J row-stochastic matrix mapping observations to columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentMatrix {
    pub entries: Array2<f64>,
    pub column_meaning: ColumnMeaning,
}

impl AssignmentMatrix {
    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn columns(&self) -> usize {
        self.entries.ncols()
    }
}

/// One-hot (or uniform, for missing values) assignment over category levels.
pub fn categorical_assign(
    values: &[Option<String>],
    levels: &[String],
) -> Result<AssignmentMatrix, AssignError> {
    let j = levels.len();
    if j == 0 {
        return Err(AssignError::UnknownLabel("<no levels>".into()));
    }
    let mut entries = Array2::<f64>::zeros((values.len(), j));
    for (i, value) in values.iter().enumerate() {
        match value {
            Some(label) => {
                let col = levels
                    .iter()
                    .position(|l| l == label)
                    .ok_or_else(|| AssignError::UnknownLabel(label.clone()))?;
                entries[[i, col]] = 1.0;
            }
            None => {
                let w = 1.0 / j as f64;
                for col in 0..j {
                    entries[[i, col]] = w;
                }
            }
        }
    }
    Ok(AssignmentMatrix {
        entries,
        column_meaning: ColumnMeaning::Labels(levels.to_vec()),
    })
}

/// Equally spaced grid nodes spanning the non-missing values.
///
/// A constant column degenerates to two nodes at value +/- 0.5.
pub fn build_grid(values: &[Option<f64>], n_nodes: usize) -> Result<Vec<f64>, AssignError> {
    if n_nodes < 2 {
        return Err(AssignError::TooFewNodes(n_nodes));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut seen = false;
    for v in values.iter().flatten() {
        if v.is_finite() {
            lo = lo.min(*v);
            hi = hi.max(*v);
            seen = true;
        }
    }
    if !seen {
        return Err(AssignError::AllMissing);
    }
    if lo == hi {
        return Ok(vec![lo - 0.5, lo + 0.5]);
    }
    let step = (hi - lo) / (n_nodes - 1) as f64;
    let mut nodes: Vec<f64> = (0..n_nodes).map(|k| lo + step * k as f64).collect();
    // Pin the endpoints so clamping is exact.
    nodes[0] = lo;
    nodes[n_nodes - 1] = hi;
    Ok(nodes)
}

/// Piecewise linear interpolation weights on a node grid.
///
/// Values outside the grid clamp to the nearest end node; missing values
/// get the uniform row. Non-missing rows have at most two nonzero entries,
/// in adjacent columns, and reconstruct the clamped value exactly.
pub fn grid_assign(
    values: &[Option<f64>],
    nodes: &[f64],
) -> Result<AssignmentMatrix, AssignError> {
    if nodes.len() < 2 {
        return Err(AssignError::TooFewNodes(nodes.len()));
    }
    if nodes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(AssignError::NonIncreasingNodes);
    }
    let j = nodes.len();
    let mut entries = Array2::<f64>::zeros((values.len(), j));
    for (i, value) in values.iter().enumerate() {
        match value {
            Some(z) if z.is_finite() => {
                let (col, t) = grid_weights(*z, nodes);
                entries[[i, col]] = 1.0 - t;
                if t > 0.0 {
                    entries[[i, col + 1]] = t;
                }
            }
            _ => {
                let w = 1.0 / j as f64;
                for col in 0..j {
                    entries[[i, col]] = w;
                }
            }
        }
    }
    Ok(AssignmentMatrix {
        entries,
        column_meaning: ColumnMeaning::Nodes(nodes.to_vec()),
    })
}

/// Segment index and fractional position of a clamped value on a grid.
pub(crate) fn grid_weights(z: f64, nodes: &[f64]) -> (usize, f64) {
    let j = nodes.len();
    if z <= nodes[0] {
        return (0, 0.0);
    }
    if z >= nodes[j - 1] {
        return (j - 2, 1.0);
    }
    // nodes[seg] <= z < nodes[seg + 1]
    let seg = match nodes.binary_search_by(|n| n.partial_cmp(&z).unwrap()) {
        Ok(exact) => return if exact == j - 1 { (j - 2, 1.0) } else { (exact, 0.0) },
        Err(ins) => ins - 1,
    };
    let t = (z - nodes[seg]) / (nodes[seg + 1] - nodes[seg]);
    (seg, t)
}

/// Assignment row for a single grid value.
pub fn grid_row(z: f64, nodes: &[f64]) -> Array1<f64> {
    let mut row = Array1::<f64>::zeros(nodes.len());
    let (col, t) = grid_weights(z, nodes);
    row[col] = 1.0 - t;
    if t > 0.0 {
        row[col + 1] = t;
    }
    row
}

/// J prototypes with the column-stochastic weights that express each
/// prototype as a convex combination of the data points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub prototypes: Vec<Vec<f64>>,
    pub weights: Array2<f64>,
    pub locality_penalty: f64,
}

/// Output of prototypal analysis: the prototype set, the per-observation
/// assignment matrix, and the objective value after each alternation.
#[derive(Debug, Clone)]
pub struct PrototypeFit {
    pub prototypes: PrototypeSet,
    pub alpha: AssignmentMatrix,
    pub objective_trace: Vec<f64>,
}

/// Solver knobs for prototypal analysis.
#[derive(Debug, Clone)]
pub struct ProtoOptions {
    /// Outer alternations over (alpha, beta).
    pub max_alternations: usize,
    /// Projected-gradient iterations per sub-problem.
    pub subproblem_iters: usize,
    /// Relative objective-change threshold for early stop.
    pub tol: f64,
}

impl Default for ProtoOptions {
    fn default() -> Self {
        ProtoOptions {
            max_alternations: 60,
            subproblem_iters: 200,
            tol: 1e-8,
        }
    }
}

/// Prototypal analysis: express each point as a local convex combination of
/// J prototypes, themselves convex combinations of the data points.
///
/// Minimizes the reconstruction error plus `locality_penalty` times the
/// weighted squared distances between points and the prototypes they load
/// on, by alternating projected-gradient descent over the assignment rows
/// and the prototype weight columns. The objective never increases across
/// alternations; the result is deterministic given the seed.
pub fn prototypal_assign(
    points: &[Vec<f64>],
    count: usize,
    locality_penalty: f64,
    seed: u64,
) -> Result<(PrototypeSet, AssignmentMatrix), AssignError> {
    let fit = prototypal_assign_opts(points, count, locality_penalty, seed, &ProtoOptions::default())?;
    Ok((fit.prototypes, fit.alpha))
}

pub fn prototypal_assign_opts(
    points: &[Vec<f64>],
    count: usize,
    locality_penalty: f64,
    seed: u64,
    opts: &ProtoOptions,
) -> Result<PrototypeFit, AssignError> {
    let m = points.len();
    if m == 0 || points[0].is_empty() || points.iter().any(|p| p.len() != points[0].len()) {
        return Err(AssignError::BadPoints);
    }
    if count > m {
        return Err(AssignError::TooManyPrototypes {
            requested: count,
            available: m,
        });
    }
    if count == 0 {
        return Err(AssignError::TooManyPrototypes {
            requested: 0,
            available: m,
        });
    }
    if opts.max_alternations == 0 || opts.subproblem_iters == 0 {
        return Err(AssignError::ZeroBudget);
    }

    let p = points[0].len();
    let z = {
        let mut z = Array2::<f64>::zeros((m, p));
        for (i, pt) in points.iter().enumerate() {
            for (q, v) in pt.iter().enumerate() {
                z[[i, q]] = *v;
            }
        }
        z
    };

    // Seed prototypes at distinct data points.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let mut beta = Array2::<f64>::zeros((m, count));
    for (jj, &idx) in order.iter().take(count).enumerate() {
        beta[[idx, jj]] = 1.0;
    }
    let mut y = beta.t().dot(&z);
    let mut alpha = Array2::<f64>::from_elem((m, count), 1.0 / count as f64);

    let lam = locality_penalty;
    let mut trace = Vec::with_capacity(opts.max_alternations + 1);
    let mut obj = proto_objective(&z, &alpha, &y, lam);
    trace.push(obj);

    for _ in 0..opts.max_alternations {
        alpha_step(&z, &mut alpha, &y, lam, opts.subproblem_iters);
        beta_step(&z, &alpha, &mut beta, &mut y, lam, opts.subproblem_iters);
        let new_obj = proto_objective(&z, &alpha, &y, lam);
        let drop = obj - new_obj;
        trace.push(new_obj);
        obj = new_obj;
        if drop <= opts.tol * obj.abs().max(1.0) {
            break;
        }
    }

    let prototypes: Vec<Vec<f64>> = (0..count).map(|jj| y.row(jj).to_vec()).collect();
    Ok(PrototypeFit {
        prototypes: PrototypeSet {
            prototypes,
            weights: beta,
            locality_penalty: lam,
        },
        alpha: AssignmentMatrix {
            entries: alpha,
            column_meaning: ColumnMeaning::Prototypes(count),
        },
        objective_trace: trace,
    })
}

/// Reconstruction error plus weighted locality cost.
pub fn proto_objective(z: &Array2<f64>, alpha: &Array2<f64>, y: &Array2<f64>, lam: f64) -> f64 {
    let recon = alpha.dot(y);
    let mut obj = 0.0;
    for i in 0..z.nrows() {
        for q in 0..z.ncols() {
            let r = z[[i, q]] - recon[[i, q]];
            obj += r * r;
        }
        for jj in 0..y.nrows() {
            obj += lam * alpha[[i, jj]] * sq_dist(z, i, y, jj);
        }
    }
    obj
}

/// Locality cost alone: sum over (i, j) of ||z_i - y_j||^2 alpha_ij.
pub fn proto_locality_cost(z: &Array2<f64>, alpha: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let mut cost = 0.0;
    for i in 0..z.nrows() {
        for jj in 0..y.nrows() {
            cost += alpha[[i, jj]] * sq_dist(z, i, y, jj);
        }
    }
    cost
}

fn sq_dist(z: &Array2<f64>, i: usize, y: &Array2<f64>, jj: usize) -> f64 {
    let mut d = 0.0;
    for q in 0..z.ncols() {
        let r = z[[i, q]] - y[[jj, q]];
        d += r * r;
    }
    d
}

/// Per-row simplex-constrained descent on alpha with backtracking.
fn alpha_step(z: &Array2<f64>, alpha: &mut Array2<f64>, y: &Array2<f64>, lam: f64, iters: usize) {
    let m = z.nrows();
    let j = y.nrows();
    for i in 0..m {
        let mut a: Vec<f64> = (0..j).map(|c| alpha[[i, c]]).collect();
        let cost: Vec<f64> = (0..j).map(|jj| lam * sq_dist(z, i, y, jj)).collect();
        let row_obj = |a: &[f64]| -> f64 {
            let mut v = 0.0;
            for q in 0..z.ncols() {
                let mut r = z[[i, q]];
                for (jj, &w) in a.iter().enumerate() {
                    r -= w * y[[jj, q]];
                }
                v += r * r;
            }
            v + a.iter().zip(&cost).map(|(w, c)| w * c).sum::<f64>()
        };
        let mut current = row_obj(&a);
        let mut step = 1.0;
        for _ in 0..iters {
            // gradient: 2 Y (Y^T a - z_i) + cost
            let mut grad = cost.clone();
            for q in 0..z.ncols() {
                let mut r = -z[[i, q]];
                for (jj, &w) in a.iter().enumerate() {
                    r += w * y[[jj, q]];
                }
                for (jj, g) in grad.iter_mut().enumerate() {
                    *g += 2.0 * r * y[[jj, q]];
                }
            }
            let mut accepted = false;
            for _ in 0..40 {
                let cand: Vec<f64> = a
                    .iter()
                    .zip(&grad)
                    .map(|(w, g)| w - step * g)
                    .collect();
                let cand = project_simplex(&cand);
                let cand_obj = row_obj(&cand);
                if cand_obj <= current {
                    let moved: f64 = cand
                        .iter()
                        .zip(&a)
                        .map(|(x, w)| (x - w).abs())
                        .sum();
                    a = cand;
                    let improved = current - cand_obj;
                    current = cand_obj;
                    accepted = true;
                    step *= 1.4;
                    if moved < 1e-14 || improved < 1e-15 * current.abs().max(1.0) {
                        accepted = false; // converged
                    }
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        for (c, w) in a.iter().enumerate() {
            alpha[[i, c]] = *w;
        }
    }
}

/// Joint simplex-constrained descent on the beta columns with backtracking.
fn beta_step(
    z: &Array2<f64>,
    alpha: &Array2<f64>,
    beta: &mut Array2<f64>,
    y: &mut Array2<f64>,
    lam: f64,
    iters: usize,
) {
    let m = z.nrows();
    let j = beta.ncols();
    let mut current = proto_objective(z, alpha, y, lam);
    let mut step = 1.0 / (m as f64);
    for _ in 0..iters {
        // dF/dY = 2 [(alpha^T alpha + lam diag(s)) Y - (1 + lam) alpha^T Z]
        let ata = alpha.t().dot(alpha);
        let atz = alpha.t().dot(z);
        let mut grad_y = ata.dot(y);
        for jj in 0..j {
            let s: f64 = (0..m).map(|i| alpha[[i, jj]]).sum();
            for q in 0..z.ncols() {
                grad_y[[jj, q]] += lam * s * y[[jj, q]];
                grad_y[[jj, q]] -= (1.0 + lam) * atz[[jj, q]];
            }
        }
        grad_y.mapv_inplace(|v| 2.0 * v);
        // chain rule through y_j = sum_i beta_ij z_i
        let grad_beta = z.dot(&grad_y.t());

        let mut accepted = false;
        for _ in 0..40 {
            let mut cand = beta.clone();
            for jj in 0..j {
                let col: Vec<f64> = (0..m)
                    .map(|i| beta[[i, jj]] - step * grad_beta[[i, jj]])
                    .collect();
                let col = project_simplex(&col);
                for (i, w) in col.iter().enumerate() {
                    cand[[i, jj]] = *w;
                }
            }
            let cand_y = cand.t().dot(z);
            let cand_obj = proto_objective(z, alpha, &cand_y, lam);
            if cand_obj <= current {
                let improved = current - cand_obj;
                *beta = cand;
                *y = cand_y;
                current = cand_obj;
                accepted = improved >= 1e-15 * current.abs().max(1.0);
                step *= 1.4;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut rho = 0;
    let mut tau = 0.0;
    for (k, &val) in u.iter().enumerate() {
        cumsum += val;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if val - t > 0.0 {
            rho = k + 1;
            tau = t;
        }
    }
    debug_assert!(rho > 0);
    let _ = rho;
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}
