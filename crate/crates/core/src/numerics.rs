//! Correlation and least-squares kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ridge term added to the (standardized) Gram matrix.
pub const RIDGE: f64 = 1e-8;
const REFINE_STEPS: usize = 3;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data has the wrong length");
        Matrix { rows, cols, data }
    }

    pub fn from_column(col: &[f64]) -> Self {
        Matrix::from_vec(col.len(), 1, col.to_vec())
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Matrix::from_vec(rows.len(), cols, data)
    }

    /// Side-by-side concatenation; all parts must have the same row count.
    pub fn hconcat(parts: &[&Matrix]) -> Self {
        let rows = parts.first().map_or(0, |m| m.rows);
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for m in parts {
                assert_eq!(m.rows, rows, "hconcat row mismatch");
                data.extend_from_slice(m.row(r));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_vec(indices.len(), self.cols, data)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// A sum of squared deviations this small relative to the data's magnitude
/// is rounding noise around a constant.
fn negligible_spread(ss: f64, scale: f64, n: usize) -> bool {
    let tol = 8.0 * f64::EPSILON * scale;
    ss <= n as f64 * tol * tol
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Pearson correlation. Returns 0 when either side has (numerically) zero variance.
pub fn pearson_corr(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Ok(0.0);
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    let (mut ax, mut ay) = (0.0f64, 0.0f64);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
        ax = ax.max(a.abs());
        ay = ay.max(b.abs());
    }
    if negligible_spread(sxx, ax, x.len()) || negligible_spread(syy, ay, y.len()) {
        return Ok(0.0);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionFit {
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub fitted: Vec<f64>,
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix
/// stored row-major in `a` (size `n × n`). `None` if a pivot is not positive.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut z = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            z[i] -= l[i * n + k] * z[k];
        }
        z[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            z[i] -= l[k * n + i] * z[k];
        }
        z[i] /= l[i * n + i];
    }
    z
}

/// Least-squares fit of `y ≈ X·coef + intercept`.
///
/// Columns are centered and scaled to unit norm, the Gram matrix is damped by
/// [`RIDGE`], and the damped solution is refined against the undamped normal
/// equations. On rank-deficient designs this converges to the minimum-norm
/// solution, so collinear columns share the weight. Constant columns get a
/// zero coefficient.
pub fn ols_fit(x: &Matrix, y: &[f64]) -> RegressionFit {
    assert_eq!(x.rows(), y.len(), "design and target row counts differ");
    let n = y.len();
    let y_mean = if n == 0 { 0.0 } else { mean(y) };
    let mut coef = vec![0.0; x.cols()];

    // active (non-constant) columns, standardized
    let mut active = Vec::new();
    let mut z_cols: Vec<Vec<f64>> = Vec::new();
    let mut scales = Vec::new();
    let mut means = Vec::new();
    for c in 0..x.cols() {
        let col = x.column(c);
        let m = mean(&col);
        let ss: f64 = col.iter().map(|v| (v - m) * (v - m)).sum();
        let scale = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if n < 2 || negligible_spread(ss, scale, n) {
            continue;
        }
        let s = ss.sqrt();
        active.push(c);
        z_cols.push(col.iter().map(|v| (v - m) / s).collect());
        scales.push(s);
        means.push(m);
    }

    let k = active.len();
    if k > 0 {
        let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
        let mut gram = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..=i {
                let g: f64 = z_cols[i].iter().zip(&z_cols[j]).map(|(a, b)| a * b).sum();
                gram[i * k + j] = g;
                gram[j * k + i] = g;
            }
        }
        let rhs: Vec<f64> = z_cols
            .iter()
            .map(|z| z.iter().zip(&yc).map(|(a, b)| a * b).sum())
            .collect();

        let mut ridge = RIDGE;
        let factor = loop {
            let mut damped = gram.clone();
            for i in 0..k {
                damped[i * k + i] += ridge;
            }
            if let Some(l) = cholesky(&damped, k) {
                break l;
            }
            ridge *= 100.0;
        };
        let mut beta = cholesky_solve(&factor, k, &rhs);
        for _ in 0..REFINE_STEPS {
            let resid: Vec<f64> = (0..k)
                .map(|i| rhs[i] - (0..k).map(|j| gram[i * k + j] * beta[j]).sum::<f64>())
                .collect();
            let step = cholesky_solve(&factor, k, &resid);
            for (b, s) in beta.iter_mut().zip(step) {
                *b += s;
            }
        }
        for (i, &c) in active.iter().enumerate() {
            coef[c] = beta[i] / scales[i];
        }
    }
    let intercept = y_mean
        - active
            .iter()
            .enumerate()
            .map(|(i, &c)| coef[c] * means[i])
            .sum::<f64>();
    let fitted = (0..n)
        .map(|r| x.row(r).iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>() + intercept)
        .collect();
    RegressionFit {
        coef,
        intercept,
        fitted,
    }
}

/// Coefficient of multiple correlation: `|corr(fitted, y)|` of the OLS fit.
pub fn multiple_corr(x: &Matrix, y: &[f64]) -> f64 {
    let fit = ols_fit(x, y);
    pearson_corr(&fit.fitted, y).map_or(0.0, f64::abs)
}

/// `y` minus its joint least-squares fit on all statistics side by side.
/// With no statistics `y` is returned unchanged.
pub fn residualize(y: &[f64], stats: &[&Matrix]) -> Vec<f64> {
    if stats.is_empty() {
        return y.to_vec();
    }
    let x = Matrix::hconcat(stats);
    let fit = ols_fit(&x, y);
    y.iter().zip(&fit.fitted).map(|(a, b)| a - b).collect()
}

/// Percentile `k ∈ [0, 100]` with linear interpolation between closest ranks.
pub fn percentile(x: &[f64], k: f64) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, k))
}

/// As [`percentile`] on already ascending, non-empty input.
pub fn percentile_sorted(sorted: &[f64], k: f64) -> f64 {
    let n = sorted.len();
    let rank = (k / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean-zero, unit-variance copy; constant input maps to zeros.
pub fn zscore(y: &[f64]) -> Vec<f64> {
    if y.is_empty() {
        return Vec::new();
    }
    let m = mean(y);
    let ss: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
    let scale = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if negligible_spread(ss, scale, y.len()) {
        return vec![0.0; y.len()];
    }
    let sd = (ss / y.len() as f64).sqrt();
    y.iter().map(|v| (v - m) / sd).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_examples() {
        assert!((pearson_corr(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson_corr(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(
            pearson_corr(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).unwrap(),
            0.0
        );
        assert_eq!(
            pearson_corr(&[0.1; 7], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap(),
            0.0
        );
        assert!(pearson_corr(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ols_exact_line() {
        let fit = ols_fit(&Matrix::from_column(&[1.0, 2.0, 3.0]), &[2.0, 4.0, 6.0]);
        assert!((fit.coef[0] - 2.0).abs() < 1e-6);
        assert!(fit.intercept.abs() < 1e-6);
    }

    #[test]
    fn ols_zero_column() {
        let y = [1.0, 4.0, 2.0, 5.0];
        let fit = ols_fit(&Matrix::from_column(&[0.0; 4]), &y);
        assert_eq!(fit.coef, vec![0.0]);
        assert_eq!(fit.intercept, 3.0);
    }

    #[test]
    fn multiple_corr_of_perfect_one_hot() {
        // category determines y exactly
        let cats = [0, 1, 2, 1, 0, 2, 2, 1];
        let levels = [3.0, -1.0, 0.5];
        let x = Matrix::from_rows(
            &cats
                .iter()
                .map(|&c| (0..3).map(|k| if k == c { 1.0 } else { 0.0 }).collect())
                .collect::<Vec<_>>(),
        );
        let y: Vec<f64> = cats.iter().map(|&c| levels[c]).collect();
        assert!((multiple_corr(&x, &y) - 1.0).abs() < 1e-12);
        assert_eq!(multiple_corr(&x, &[2.0; 8]), 0.0);
    }

    #[test]
    fn residualize_examples() {
        let y = [1.0, 3.0, 2.0, 7.0, 5.0];
        assert_eq!(residualize(&y, &[]), y.to_vec());
        let own = Matrix::from_column(&y);
        assert!(residualize(&y, &[&own]).iter().all(|r| r.abs() < 1e-8));
        let x = Matrix::from_column(&[0.3, -1.0, 2.0, 0.0, 1.5]);
        let r = residualize(&y, &[&x]);
        assert!(pearson_corr(&r, &x.column(0)).unwrap().abs() <= 1e-8);
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 50.0).unwrap(), 2.5);
        assert_eq!(percentile(&[4.0, 2.0, 9.0], 0.0).unwrap(), 2.0);
        assert_eq!(percentile(&[4.0, 2.0, 9.0], 100.0).unwrap(), 9.0);
        assert_eq!(percentile(&[7.0], 33.0).unwrap(), 7.0);
        assert!(percentile(&[], 50.0).is_err());
    }
}
