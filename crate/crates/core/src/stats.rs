//! Small descriptive-statistics helpers shared by the estimators and the
//! benchmarks.

use nalgebra::{DMatrix, DVector};

/// Least-squares slope of `ys` on `xs`.
pub fn regression_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Unbiased sample variance.
pub fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Column means of an `n x d` data matrix.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Unbiased sample covariance of the rows of `x`.
pub fn sample_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = column_means(x);
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    centered.transpose() * &centered / (x.nrows() as f64 - 1.0)
}

/// Natural cubic spline through `(x_j, y_j)` with increasing `x`.
#[derive(Clone, Debug)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        assert!(n >= 2 && y.len() == n, "spline needs at least two knots");
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm for the second derivatives.
            let mut c = vec![0.0; n];
            let mut r = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                let rhs = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
                let diag = 2.0 * (h0 + h1) - h0 * c[i - 1];
                c[i] = h1 / diag;
                r[i] = (rhs - h0 * r[i - 1]) / diag;
            }
            for i in (1..n - 1).rev() {
                m[i] = r[i] - c[i] * m[i + 1];
            }
        }
        Self { x, y, m }
    }

    /// Value at `t`; linear extrapolation outside the knots.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let j = self.x.partition_point(|&v| v <= t).clamp(1, n - 1);
        let (x0, x1) = (self.x[j - 1], self.x[j]);
        let h = x1 - x0;
        let (a, b) = ((x1 - t) / h, (t - x0) / h);
        if !(0.0..=1.0).contains(&b) {
            let secant = (self.y[j] - self.y[j - 1]) / h;
            return if b < 0.0 {
                self.y[j - 1] + (secant - h * (2.0 * self.m[j - 1] + self.m[j]) / 6.0) * (t - x0)
            } else {
                self.y[j] + (secant + h * (self.m[j - 1] + 2.0 * self.m[j]) / 6.0) * (t - x1)
            };
        }
        a * self.y[j - 1] + b * self.y[j] + h * h * ((a * a * a - a) * self.m[j - 1] + (b * b * b - b) * self.m[j]) / 6.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.5 * x).collect();
        assert!((regression_slope(&xs, &ys) + 0.5).abs() < 1e-14);
    }

    #[test]
    fn covariance_of_two_points() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 4.0]);
        let s = sample_covariance(&x);
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[2.0, 4.0, 4.0, 8.0]));
        assert_eq!(sample_variance(&[1.0, 3.0]), 2.0);
    }

    #[test]
    fn spline_reproduces_smooth_function() {
        // sin has zero curvature at 0 and π, matching the natural end conditions.
        let x: Vec<f64> = (0..=40).map(|i| i as f64 * std::f64::consts::PI / 40.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let s = CubicSpline::new(x, y);
        for i in 0..400 {
            let t = i as f64 * std::f64::consts::PI / 400.0;
            assert!((s.eval(t) - t.sin()).abs() < 1e-5, "{t}");
        }
        let line = CubicSpline::new(vec![0.0, 1.0, 3.0], vec![1.0, 3.0, 7.0]);
        for t in [-1.0, 0.0, 0.5, 2.0, 3.0, 5.0] {
            assert!((line.eval(t) - (1.0 + 2.0 * t)).abs() < 1e-12);
        }
    }
}
