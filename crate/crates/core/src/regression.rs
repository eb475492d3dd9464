//! Dense least-squares kernels: OLS, Lasso, and sequential thresholded
//! ridge. Solvers work on explicit column vectors; matrices here are tall
//! and narrow (many grid points, a handful of candidate terms), so a
//! hand-rolled Householder QR is plenty and avoids normal-equation
//! conditioning trouble with near-collinear term columns.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RegressionError {
    #[error("design matrix needs rows >= columns >= 1, got {rows} rows x {cols} columns")]
    BadShape { rows: usize, cols: usize },
    #[error("column {col} has length {len}, expected {rows}")]
    ColumnLength { col: usize, len: usize, rows: usize },
    #[error("column {col} has a non-finite entry at row {row}")]
    NonFinite { col: usize, row: usize },
    #[error("{labels} labels for {cols} columns")]
    LabelCount { labels: usize, cols: usize },
}

/// Tall column-major matrix of term values with human-readable labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: Vec<Vec<f64>>,
    labels: Vec<String>,
}

impl DesignMatrix {
    pub fn new(cols: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self, RegressionError> {
        let rows = cols.first().map_or(0, |c| c.len());
        if cols.is_empty() || rows < cols.len() {
            return Err(RegressionError::BadShape { rows, cols: cols.len() });
        }
        if labels.len() != cols.len() {
            return Err(RegressionError::LabelCount { labels: labels.len(), cols: cols.len() });
        }
        for (j, col) in cols.iter().enumerate() {
            if col.len() != rows {
                return Err(RegressionError::ColumnLength { col: j, len: col.len(), rows });
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(RegressionError::NonFinite { col: j, row: i });
            }
        }
        Ok(DesignMatrix { rows, cols, labels })
    }

    /// Auto-labels columns `c0, c1, ...`; handy in tests.
    pub fn from_columns(cols: Vec<Vec<f64>>) -> Result<Self, RegressionError> {
        let labels = (0..cols.len()).map(|j| alloc::format!("c{j}")).collect();
        DesignMatrix::new(cols, labels)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn num_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.cols[j]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Euclidean norm of each column; a cheap conditioning diagnostic.
    pub fn column_norms(&self) -> Vec<f64> {
        self.cols.iter().map(|c| norm(c)).collect()
    }

    /// `y_hat = A beta`.
    pub fn predict(&self, beta: &[f64]) -> Vec<f64> {
        assert_eq!(beta.len(), self.cols.len());
        let mut out = vec![0.0; self.rows];
        for (b, col) in beta.iter().zip(&self.cols) {
            if *b == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(col) {
                *o += b * v;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OlsSolution {
    pub beta: Vec<f64>,
    pub residual_norm: f64,
    pub rank: usize,
    /// True when the pivoted QR found the columns numerically dependent;
    /// `beta` is then the minimum-norm solution.
    pub rank_deficient: bool,
}

/// Least squares via Householder QR with column pivoting; rank-deficient
/// systems fall back to the minimum-norm solution through a complete
/// orthogonal decomposition.
pub fn ols(a: &DesignMatrix, y: &[f64]) -> OlsSolution {
    assert_eq!(y.len(), a.rows(), "target length must match design rows");
    let (beta, rank) = lstsq(&a.cols, y);
    let mut resid = y.to_vec();
    for (b, col) in beta.iter().zip(&a.cols) {
        for (r, v) in resid.iter_mut().zip(col) {
            *r -= b * v;
        }
    }
    OlsSolution {
        residual_norm: norm(&resid),
        rank,
        rank_deficient: rank < a.num_cols(),
        beta,
    }
}

/// Relative diagonal cutoff deciding the numerical rank in the pivoted QR.
const RANK_TOL: f64 = 1e-10;

fn norm(v: &[f64]) -> f64 {
    crate::math::sqrt(v.iter().map(|x| x * x).sum::<f64>())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Applies the Householder reflector with vector `v` to `x` in place.
fn reflect(x: &mut [f64], v: &[f64], vnorm2: f64) {
    let s = 2.0 * dot(x, v) / vnorm2;
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= s * vi;
    }
}

/// Pivoted-QR least squares on raw columns; returns (beta, rank).
fn lstsq(cols: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, usize) {
    let m = y.len();
    let n = cols.len();
    let mut a: Vec<Vec<f64>> = cols.to_vec();
    let mut qty = y.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);

    for k in 0..n {
        // Pivot: bring the column with the largest remaining mass forward.
        let (mut best, mut best_mass) = (k, -1.0);
        for j in k..n {
            let mass: f64 = a[j][k..].iter().map(|v| v * v).sum();
            if mass > best_mass {
                best = j;
                best_mass = mass;
            }
        }
        a.swap(k, best);
        perm.swap(k, best);
        let col_norm = crate::math::sqrt(best_mass.max(0.0));
        if col_norm == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        let alpha = if a[k][k] >= 0.0 { -col_norm } else { col_norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2 = dot(&v, &v);
        a[k][k] = alpha;
        for r in k + 1..m {
            a[k][r] = 0.0;
        }
        for j in k + 1..n {
            reflect(&mut a[j][k..], &v, vnorm2);
        }
        reflect(&mut qty[k..], &v, vnorm2);
        reflectors.push(v);
    }

    // Numerical rank from the pivoted diagonal.
    let d0 = a[0][0].abs();
    let mut rank = 0;
    while rank < n && a[rank][rank].abs() > RANK_TOL * d0 {
        rank += 1;
    }

    let mut permuted = vec![0.0; n];
    if rank == n {
        for k in (0..n).rev() {
            let mut s = qty[k];
            for j in k + 1..n {
                s -= a[j][k] * permuted[j];
            }
            permuted[k] = s / a[k][k];
        }
    } else if rank > 0 {
        // Minimum-norm solution: orthogonalize the trapezoid R (rank x n)
        // from the right by factoring its transpose, then solve the small
        // triangular system and map back.
        let mut rt: Vec<Vec<f64>> = (0..rank).map(|i| (0..n).map(|j| a[j][i]).collect()).collect();
        let mut vs2: Vec<Vec<f64>> = Vec::with_capacity(rank);
        for k in 0..rank {
            let col_norm = norm(&rt[k][k..]);
            if col_norm == 0.0 {
                vs2.push(Vec::new());
                continue;
            }
            let alpha = if rt[k][k] >= 0.0 { -col_norm } else { col_norm };
            let mut v: Vec<f64> = rt[k][k..].to_vec();
            v[0] -= alpha;
            let vnorm2 = dot(&v, &v);
            rt[k][k] = alpha;
            for r in k + 1..n {
                rt[k][r] = 0.0;
            }
            for j in k + 1..rank {
                reflect(&mut rt[j][k..], &v, vnorm2);
            }
            vs2.push(v);
        }
        // Forward-substitute T^t w = c with T upper triangular.
        let mut w = vec![0.0; rank];
        for i in 0..rank {
            let mut s = qty[i];
            for j in 0..i {
                s -= rt[i][j] * w[j];
            }
            let t = rt[i][i];
            w[i] = if t != 0.0 { s / t } else { 0.0 };
        }
        permuted[..rank].copy_from_slice(&w);
        for k in (0..rank).rev() {
            if !vs2[k].is_empty() {
                let vnorm2 = dot(&vs2[k], &vs2[k]);
                reflect(&mut permuted[k..], &vs2[k], vnorm2);
            }
        }
    }

    let mut beta = vec![0.0; n];
    for k in 0..n {
        beta[perm[k]] = permuted[k];
    }
    (beta, rank)
}

/// Lasso objective `||y - A b||^2 + alpha * ||b||_1` on raw column scales,
/// minimized by cyclic coordinate descent with soft thresholding. Stops
/// when the largest coefficient change in a sweep drops below 1e-10 or
/// after 1e4 sweeps.
pub fn lasso(a: &DesignMatrix, y: &[f64], alpha: f64) -> Vec<f64> {
    lasso_from(a, y, alpha, &vec![0.0; a.num_cols()])
}

/// Lasso with a warm-start coefficient vector (same objective and stop
/// rule as [`lasso`]); the per-epoch refinement loop re-enters here.
pub fn lasso_from(a: &DesignMatrix, y: &[f64], alpha: f64, init: &[f64]) -> Vec<f64> {
    assert!(alpha >= 0.0, "penalty must be non-negative");
    assert_eq!(y.len(), a.rows());
    assert_eq!(init.len(), a.num_cols());
    let n = a.num_cols();
    let norms2: Vec<f64> = a.cols.iter().map(|c| dot(c, c)).collect();
    let mut beta = init.to_vec();
    let mut resid = y.to_vec();
    for (b, col) in beta.iter().zip(&a.cols) {
        if *b != 0.0 {
            for (r, v) in resid.iter_mut().zip(col) {
                *r -= b * v;
            }
        }
    }
    let half_alpha = alpha / 2.0;
    for _ in 0..10_000 {
        let mut max_delta = 0.0_f64;
        for j in 0..n {
            if norms2[j] == 0.0 {
                continue;
            }
            let rho = dot(&a.cols[j], &resid) + norms2[j] * beta[j];
            let new = soft_threshold(rho, half_alpha) / norms2[j];
            let delta = new - beta[j];
            if delta != 0.0 {
                for (r, v) in resid.iter_mut().zip(&a.cols[j]) {
                    *r -= delta * v;
                }
                beta[j] = new;
            }
            max_delta = max_delta.max(delta.abs());
        }
        if max_delta < 1e-10 {
            break;
        }
    }
    beta
}

fn soft_threshold(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StridgeOutcome {
    /// Full-length coefficients, zero off the support.
    pub beta: Vec<f64>,
    /// Surviving column indices, ascending.
    pub support: Vec<usize>,
    /// True when thresholding removed every term.
    pub empty_model: bool,
}

/// Sequential thresholded ridge: alternate a ridge solve with hard
/// thresholding at `tol_threshold` until the support stabilizes (at most
/// `iters` rounds), then refit the survivors by plain OLS.
pub fn stridge(
    a: &DesignMatrix,
    y: &[f64],
    ridge_lambda: f64,
    tol_threshold: f64,
    iters: usize,
) -> StridgeOutcome {
    assert!(iters >= 1);
    assert!(ridge_lambda >= 0.0 && tol_threshold >= 0.0);
    assert_eq!(y.len(), a.rows());
    let n = a.num_cols();
    let mut support: Vec<usize> = (0..n).collect();
    for _ in 0..iters {
        let beta_s = ridge_on(a, y, &support, ridge_lambda);
        let kept: Vec<usize> = support
            .iter()
            .zip(&beta_s)
            .filter(|(_, b)| b.abs() >= tol_threshold)
            .map(|(&j, _)| j)
            .collect();
        if kept.is_empty() {
            return StridgeOutcome { beta: vec![0.0; n], support: kept, empty_model: true };
        }
        let stable = kept == support;
        support = kept;
        if stable {
            break;
        }
    }
    let cols: Vec<Vec<f64>> = support.iter().map(|&j| a.cols[j].clone()).collect();
    let (beta_s, _) = lstsq(&cols, y);
    let mut beta = vec![0.0; n];
    for (&j, b) in support.iter().zip(&beta_s) {
        beta[j] = *b;
    }
    StridgeOutcome { beta, support, empty_model: false }
}

/// Ridge solve on a column subset via the augmented least-squares system
/// `[A; sqrt(lambda) I]`.
fn ridge_on(a: &DesignMatrix, y: &[f64], support: &[usize], lambda: f64) -> Vec<f64> {
    let m = a.rows();
    let k = support.len();
    let extra = if lambda > 0.0 { k } else { 0 };
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    for (s, &j) in support.iter().enumerate() {
        let mut c = Vec::with_capacity(m + extra);
        c.extend_from_slice(&a.cols[j]);
        if lambda > 0.0 {
            c.extend((0..k).map(|r| if r == s { crate::math::sqrt(lambda) } else { 0.0 }));
        }
        cols.push(c);
    }
    let mut y_aug = Vec::with_capacity(m + extra);
    y_aug.extend_from_slice(y);
    y_aug.extend(core::iter::repeat(0.0).take(extra));
    lstsq(&cols, &y_aug).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use approx::assert_relative_eq;

    fn random_matrix(m: usize, n: usize, seed: u64) -> (DesignMatrix, Vec<f64>) {
        let mut rng = Rng::new(seed);
        let cols: Vec<Vec<f64>> =
            (0..n).map(|_| (0..m).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
        let y: Vec<f64> = (0..m).map(|_| rng.uniform(-2.0, 2.0)).collect();
        (DesignMatrix::from_columns(cols).unwrap(), y)
    }

    fn to_nalgebra(a: &DesignMatrix) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(a.rows(), a.num_cols(), |i, j| a.column(j)[i])
    }

    #[test]
    fn shape_validation() {
        assert!(DesignMatrix::from_columns(vec![]).is_err());
        assert!(DesignMatrix::from_columns(vec![vec![1.0], vec![2.0]]).is_err());
        assert!(DesignMatrix::from_columns(vec![vec![1.0, f64::NAN]]).is_err());
        assert!(DesignMatrix::new(vec![vec![1.0, 2.0]], vec![]).is_err());
    }

    #[test]
    fn single_ones_column_fits_the_mean() {
        let a = DesignMatrix::from_columns(vec![vec![1.0, 1.0, 1.0]]).unwrap();
        let sol = ols(&a, &[1.0, 2.0, 3.0]);
        assert_relative_eq!(sol.beta[0], 2.0, max_relative = 1e-14);
        assert!(!sol.rank_deficient);
    }

    #[test]
    fn exact_fit_has_negligible_residual() {
        let (a, _) = random_matrix(40, 3, 7);
        let truth = [1.5, -2.0, 0.25];
        let y = a.predict(&truth);
        let sol = ols(&a, &y);
        assert!(sol.residual_norm <= 1e-10 * norm(&y));
        for (b, t) in sol.beta.iter().zip(truth) {
            assert_relative_eq!(*b, t, max_relative = 1e-10);
        }
    }

    #[test]
    fn ols_matches_svd_oracle() {
        for seed in 0..10 {
            let (a, y) = random_matrix(50, 4, 100 + seed);
            let sol = ols(&a, &y);
            let na = to_nalgebra(&a);
            let ny = nalgebra::DVector::from_column_slice(&y);
            let oracle = na.svd(true, true).solve(&ny, 1e-14).unwrap();
            for j in 0..4 {
                assert_relative_eq!(sol.beta[j], oracle[j], max_relative = 1e-8, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn residual_is_orthogonal_to_columns() {
        let (a, y) = random_matrix(60, 5, 42);
        let sol = ols(&a, &y);
        let pred = a.predict(&sol.beta);
        let resid: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
        for j in 0..a.num_cols() {
            assert!(dot(a.column(j), &resid).abs() <= 1e-8 * norm(&y));
        }
    }

    #[test]
    fn duplicate_column_yields_min_norm_solution() {
        let mut rng = Rng::new(3);
        let c: Vec<f64> = (0..30).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let d: Vec<f64> = (0..30).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let y: Vec<f64> = (0..30).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let a = DesignMatrix::from_columns(vec![c.clone(), c.clone(), d.clone()]).unwrap();
        let sol = ols(&a, &y);
        assert!(sol.rank_deficient);
        assert_eq!(sol.rank, 2);

        let pinv = to_nalgebra(&a).pseudo_inverse(1e-12).unwrap();
        let oracle = pinv * nalgebra::DVector::from_column_slice(&y);
        for j in 0..3 {
            assert_relative_eq!(sol.beta[j], oracle[j], max_relative = 1e-8, epsilon = 1e-10);
        }
    }

    #[test]
    fn column_scaling_rescales_only_that_coefficient() {
        let (a, y) = random_matrix(45, 4, 11);
        let base = ols(&a, &y);
        let mut cols: Vec<Vec<f64>> = (0..4).map(|j| a.column(j).to_vec()).collect();
        for v in &mut cols[2] {
            *v *= 10.0;
        }
        let scaled = ols(&DesignMatrix::from_columns(cols).unwrap(), &y);
        assert_relative_eq!(scaled.beta[2], base.beta[2] / 10.0, max_relative = 1e-9);
        for j in [0usize, 1, 3] {
            assert_relative_eq!(scaled.beta[j], base.beta[j], max_relative = 1e-9);
        }
    }

    #[test]
    fn lasso_with_zero_penalty_equals_ols() {
        let (a, y) = random_matrix(30, 3, 9);
        let l = lasso(&a, &y, 0.0);
        let o = ols(&a, &y).beta;
        for (x, z) in l.iter().zip(&o) {
            assert_relative_eq!(*x, *z, max_relative = 1e-8, epsilon = 1e-8);
        }
    }

    #[test]
    fn lasso_shuts_down_above_the_kkt_bound() {
        let (a, y) = random_matrix(25, 3, 13);
        let bound = (0..3).map(|j| dot(a.column(j), &y).abs()).fold(0.0, f64::max);
        let beta = lasso(&a, &y, 2.0 * bound + 1e-9);
        assert_eq!(beta, vec![0.0, 0.0, 0.0]);
    }

    fn lasso_objective(a: &DesignMatrix, y: &[f64], alpha: f64, beta: &[f64]) -> f64 {
        let pred = a.predict(beta);
        let ss: f64 = y.iter().zip(&pred).map(|(t, p)| (t - p) * (t - p)).sum();
        ss + alpha * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    #[test]
    fn lasso_beats_a_dense_grid_search() {
        let (a, y) = random_matrix(20, 2, 17);
        let alpha = 0.05;
        let beta = lasso(&a, &y, alpha);
        let obj = lasso_objective(&a, &y, alpha, &beta);
        let mut grid_best = f64::INFINITY;
        for i in 0..=400 {
            for j in 0..=400 {
                let cand = [-2.0 + i as f64 * 0.01, -2.0 + j as f64 * 0.01];
                grid_best = grid_best.min(lasso_objective(&a, &y, alpha, &cand));
            }
        }
        assert!(obj <= grid_best + 1e-12, "cd {obj} vs grid {grid_best}");
    }

    #[test]
    fn lasso_objective_never_exceeds_the_ols_point() {
        for seed in 0..8 {
            let (a, y) = random_matrix(30, 4, 500 + seed);
            let o = ols(&a, &y).beta;
            for alpha in [1e-3, 1e-2, 0.1, 1.0] {
                let l = lasso(&a, &y, alpha);
                assert!(
                    lasso_objective(&a, &y, alpha, &l)
                        <= lasso_objective(&a, &y, alpha, &o) + 1e-10
                );
            }
        }
    }

    #[test]
    fn lasso_warm_start_agrees_with_cold_start() {
        let (a, y) = random_matrix(30, 3, 77);
        let cold = lasso(&a, &y, 0.02);
        let warm = lasso_from(&a, &y, 0.02, &[5.0, -5.0, 5.0]);
        for (c, w) in cold.iter().zip(&warm) {
            assert_relative_eq!(*c, *w, max_relative = 1e-6, epsilon = 1e-8);
        }
    }

    #[test]
    fn stridge_collapses_to_ols_without_threshold() {
        let (a, y) = random_matrix(35, 4, 23);
        let out = stridge(&a, &y, 0.0, 0.0, 5);
        let o = ols(&a, &y).beta;
        assert!(!out.empty_model);
        assert_eq!(out.support, vec![0, 1, 2, 3]);
        for (x, z) in out.beta.iter().zip(&o) {
            assert_relative_eq!(*x, *z, max_relative = 1e-12);
        }
    }

    #[test]
    fn stridge_flags_an_empty_model() {
        let (a, y) = random_matrix(35, 4, 29);
        let max_coef = ols(&a, &y).beta.iter().map(|b| b.abs()).fold(0.0, f64::max);
        let out = stridge(&a, &y, 0.0, max_coef * 2.0, 5);
        assert!(out.empty_model);
        assert!(out.support.is_empty());
        assert!(out.beta.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn stridge_recovers_planted_sparse_models() {
        // 50 random 2-sparse plants in an 8-column library, no noise.
        for trial in 0..50 {
            let mut rng = Rng::new(9000 + trial);
            let (a, _) = random_matrix(500, 8, 7000 + trial);
            let i = rng.below(8) as usize;
            let j = (i + 1 + rng.below(7) as usize) % 8;
            let ci = rng.uniform(0.5, 2.0) * if rng.chance(0.5) { 1.0 } else { -1.0 };
            let cj = rng.uniform(0.5, 2.0) * if rng.chance(0.5) { 1.0 } else { -1.0 };
            let mut truth = vec![0.0; 8];
            truth[i] = ci;
            truth[j] = cj;
            let y = a.predict(&truth);
            let out = stridge(&a, &y, 1e-6, 0.2, 20);
            let mut want = vec![i, j];
            want.sort_unstable();
            assert_eq!(out.support, want, "trial {trial}");
            assert_relative_eq!(out.beta[i], ci, max_relative = 1e-6);
            assert_relative_eq!(out.beta[j], cj, max_relative = 1e-6);
        }
    }
}
