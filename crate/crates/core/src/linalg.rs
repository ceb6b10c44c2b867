//! Cholesky factors of scale matrices, including the rank-deficient staircase
//! form, and Mahalanobis distances.

use nalgebra::{DMatrix, DVector};

use crate::error::{NvmixError, Result};

/// Relative zero-pivot tolerance (times the largest diagonal entry).
pub const DEFAULT_ZERO_TOL: f64 = 1e-10;

/// Factor `C` of a scale matrix with `C Cᵀ = Σ` after undoing the row
/// permutation and scalings.
///
/// Row `i` of `c` belongs to original coordinate `perm[i]`. In the singular
/// case row `i` has been divided by `row_scales[i]` and, if `negated[i]`,
/// multiplied by -1, so that its pivot entry is exactly 1. Rows of `Σ` that
/// are identically zero are listed in `zero_rows` and kept out of `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleFactor {
    /// `(d - zero_rows.len()) x rank` lower staircase matrix.
    pub c: DMatrix<f64>,
    pub rank: usize,
    pub perm: Vec<usize>,
    pub row_scales: Vec<f64>,
    pub negated: Vec<bool>,
    /// First row of each of the `rank` blocks.
    pub block_heads: Vec<usize>,
    /// Original coordinates with zero variance.
    pub zero_rows: Vec<usize>,
    dim: usize,
}

impl ScaleFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.dim
    }

    /// Rows belonging to block `l`.
    pub fn block(&self, l: usize) -> std::ops::Range<usize> {
        let end = self.block_heads.get(l + 1).copied().unwrap_or(self.c.nrows());
        self.block_heads[l]..end
    }

    /// `d x rank` matrix `L` in the original coordinate order with
    /// `L Lᵀ = Σ` (zero rows included).
    pub fn loading_matrix(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.dim, self.rank);
        for (i, &orig) in self.perm.iter().take(self.c.nrows()).enumerate() {
            let s = if self.negated[i] { -self.row_scales[i] } else { self.row_scales[i] };
            for j in 0..self.rank {
                l[(orig, j)] = s * self.c[(i, j)];
            }
        }
        l
    }

    /// `L Lᵀ`, the reconstructed scale matrix.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let l = self.loading_matrix();
        &l * l.transpose()
    }

    /// log |Σ| for a full-rank factor.
    pub fn log_det(&self) -> Result<f64> {
        self.require_full_rank()?;
        Ok(2.0 * (0..self.dim).map(|i| self.c[(i, i)].ln()).sum::<f64>())
    }

    fn require_full_rank(&self) -> Result<()> {
        if self.is_full_rank() {
            Ok(())
        } else {
            Err(NvmixError::Singular { rank: self.rank, dim: self.dim })
        }
    }

    /// Solve `C z = v` for a full-rank factor.
    pub fn solve_lower(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.require_full_rank()?;
        let d = self.dim;
        if v.len() != d {
            return Err(NvmixError::DimensionMismatch(format!("vector of length {} for dimension {d}", v.len())));
        }
        let mut z = vec![0.0; d];
        for i in 0..d {
            let mut s = v[i];
            for j in 0..i {
                s -= self.c[(i, j)] * z[j];
            }
            z[i] = s / self.c[(i, i)];
        }
        Ok(z)
    }
}

fn check_square_symmetric(sigma: &DMatrix<f64>) -> Result<()> {
    let d = sigma.nrows();
    if d == 0 || sigma.ncols() != d {
        return Err(NvmixError::DimensionMismatch(format!(
            "scale matrix must be square and non-empty, got {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(NvmixError::Domain("scale matrix has non-finite entries".into()));
    }
    let scale = sigma.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for i in 0..d {
        for j in 0..i {
            if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-10 * scale {
                return Err(NvmixError::Domain(format!("scale matrix not symmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

fn max_diag(sigma: &DMatrix<f64>) -> f64 {
    (0..sigma.nrows()).map(|i| sigma[(i, i)]).fold(0.0, f64::max)
}

/// Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(sigma: &DMatrix<f64>) -> Result<ScaleFactor> {
    check_square_symmetric(sigma)?;
    let d = sigma.nrows();
    let tol = DEFAULT_ZERO_TOL * max_diag(sigma);
    let mut c = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut s = sigma[(j, j)];
        for k in 0..j {
            s -= c[(j, k)] * c[(j, k)];
        }
        if !(s > tol) {
            return Err(NvmixError::NotPositiveDefinite(format!("pivot {j} is {s:e}")));
        }
        let cjj = s.sqrt();
        c[(j, j)] = cjj;
        for i in j + 1..d {
            let mut s = sigma[(i, j)];
            for k in 0..j {
                s -= c[(i, k)] * c[(j, k)];
            }
            c[(i, j)] = s / cjj;
        }
    }
    Ok(ScaleFactor {
        c,
        rank: d,
        perm: (0..d).collect(),
        row_scales: vec![1.0; d],
        negated: vec![false; d],
        block_heads: (0..d).collect(),
        zero_rows: vec![],
        dim: d,
    })
}

/// Full-rank Cholesky if possible, otherwise (when allowed) the singular
/// staircase factor.
pub fn factorize(sigma: &DMatrix<f64>, allow_singular: bool) -> Result<ScaleFactor> {
    match cholesky(sigma) {
        Err(NvmixError::NotPositiveDefinite(_)) if allow_singular => singular_cholesky(sigma, None),
        other => other,
    }
}

/// Rank-revealing Cholesky factor of a positive-semidefinite matrix in the
/// permuted, unit-pivot staircase form.
///
/// Columns whose pivot falls below `tol_zero` (default `1e-10` times the
/// largest diagonal entry) are dropped. Rows are then grouped by their last
/// nonzero column and scaled so that entry equals 1.
pub fn singular_cholesky(sigma: &DMatrix<f64>, tol_zero: Option<f64>) -> Result<ScaleFactor> {
    check_square_symmetric(sigma)?;
    let d = sigma.nrows();
    let tol = tol_zero.unwrap_or(DEFAULT_ZERO_TOL) * max_diag(sigma).max(f64::MIN_POSITIVE);
    let mut l = DMatrix::<f64>::zeros(d, d);
    let mut pivot_cols = Vec::new();
    for j in 0..d {
        let mut s = sigma[(j, j)];
        for k in 0..j {
            s -= l[(j, k)] * l[(j, k)];
        }
        if s < -1e3 * tol {
            return Err(NvmixError::NotPositiveDefinite(format!(
                "negative pivot {s:e} at {j}; matrix is not positive semidefinite"
            )));
        }
        if s <= tol {
            continue;
        }
        let ljj = s.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..d {
            let mut s = sigma[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
        pivot_cols.push(j);
    }
    let r = pivot_cols.len();
    if r == 0 {
        return Err(NvmixError::Singular { rank: 0, dim: d });
    }
    // compact to d x r
    let mut compact = DMatrix::zeros(d, r);
    for (jj, &j) in pivot_cols.iter().enumerate() {
        for i in 0..d {
            compact[(i, jj)] = l[(i, j)];
        }
    }
    let zero_tol = tol.sqrt() * 1e-3;
    let last_nonzero = |i: usize| -> Option<usize> {
        (0..r).rev().find(|&j| compact[(i, j)].abs() > zero_tol)
    };
    let mut rows: Vec<(usize, usize)> = Vec::new();
    let mut zero_rows = Vec::new();
    for i in 0..d {
        match last_nonzero(i) {
            Some(j) => rows.push((j, i)),
            None => zero_rows.push(i),
        }
    }
    rows.sort_by_key(|&(j, _)| j);
    let n = rows.len();
    let mut c = DMatrix::zeros(n, r);
    let mut perm = Vec::with_capacity(d);
    let mut row_scales = Vec::with_capacity(n);
    let mut negated = Vec::with_capacity(n);
    let mut block_heads = Vec::with_capacity(r);
    for (k, &(j, i)) in rows.iter().enumerate() {
        if block_heads.len() == j {
            block_heads.push(k);
        }
        let piv = compact[(i, j)];
        for jj in 0..=j {
            c[(k, jj)] = compact[(i, jj)] / piv;
        }
        c[(k, j)] = 1.0;
        perm.push(i);
        row_scales.push(piv.abs());
        negated.push(piv < 0.0);
    }
    perm.extend(&zero_rows);
    debug_assert_eq!(block_heads.len(), r);
    Ok(ScaleFactor { c, rank: r, perm, row_scales, negated, block_heads, zero_rows, dim: d })
}

/// Squared Mahalanobis distance `(x-μ)ᵀ Σ⁻¹ (x-μ)` via a triangular solve.
pub fn mahalanobis_sq(x: &[f64], mu: &[f64], factor: &ScaleFactor) -> Result<f64> {
    if x.len() != mu.len() {
        return Err(NvmixError::DimensionMismatch(format!("x has {} entries, mu has {}", x.len(), mu.len())));
    }
    let diff: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    let z = factor.solve_lower(&diff)?;
    Ok(z.iter().map(|v| v * v).sum())
}

/// Squared Mahalanobis distances of the rows of `x`.
pub fn mahalanobis_rows(x: &DMatrix<f64>, mu: &DVector<f64>, factor: &ScaleFactor) -> Result<Vec<f64>> {
    let mu = mu.as_slice();
    x.row_iter()
        .map(|row| {
            let r: Vec<f64> = row.iter().copied().collect();
            mahalanobis_sq(&r, mu, factor)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn wishart(d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::<f64>::from_fn(d, d, |_, _| { let z: f64 = StandardNormal.sample(&mut rng); z });
        &a * a.transpose() + DMatrix::identity(d, d) * 0.1
    }

    #[test]
    fn identity_and_two_by_two() {
        let f = cholesky(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(f.c, DMatrix::identity(3, 3));
        let s = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 5.0]);
        let f = cholesky(&s).unwrap();
        assert_eq!(f.c, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2.0]));
    }

    #[test]
    fn wishart_reconstruction() {
        let s = wishart(10, 1);
        let f = cholesky(&s).unwrap();
        let rec = &f.c * f.c.transpose();
        assert!((rec - &s).abs().max() < 1e-10 * s.abs().max());
    }

    #[test]
    fn non_pd_is_rejected_or_routed() {
        let s = DMatrix::from_element(3, 3, 1.0);
        assert!(matches!(cholesky(&s), Err(NvmixError::NotPositiveDefinite(_))));
        assert_eq!(factorize(&s, true).unwrap().rank, 1);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(cholesky(&asym).is_err());
    }

    #[test]
    fn rank_one_all_ones() {
        let s = DMatrix::from_element(3, 3, 1.0);
        let f = singular_cholesky(&s, None).unwrap();
        assert_eq!(f.rank, 1);
        assert_eq!(f.c, DMatrix::from_element(3, 1, 1.0));
        assert_eq!(f.block_heads, vec![0]);
        assert!((f.reconstruct() - &s).abs().max() < 1e-8);
    }

    #[test]
    fn zero_variance_row_goes_last() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 1.0]));
        let f = singular_cholesky(&s, None).unwrap();
        assert_eq!(f.rank, 2);
        assert_eq!(f.perm, vec![0, 2, 1]);
        assert_eq!(f.zero_rows, vec![1]);
        assert!((f.reconstruct() - &s).abs().max() < 1e-8);
    }

    #[test]
    fn singular_staircase_and_negative_pivot() {
        // X1 = Z1, X2 = -2 Z1, X3 = Z2, X4 = Z1 + Z2
        let l = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -2.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let s = &l * l.transpose();
        let f = singular_cholesky(&s, None).unwrap();
        assert_eq!(f.rank, 2);
        assert_eq!(f.block_heads, vec![0, 2]);
        assert_eq!(f.perm[..2], [0, 1]);
        assert_eq!(f.negated[..2], [false, true]);
        assert_relative_eq!(f.row_scales[1], 2.0, max_relative = 1e-12);
        for k in 0..4 {
            let j = if k < 2 { 0 } else { 1 };
            assert_eq!(f.c[(k, j)], 1.0);
        }
        assert!((f.reconstruct() - &s).abs().max() < 1e-8);
    }

    #[test]
    fn full_rank_through_singular_path() {
        let s = wishart(5, 2);
        let f = singular_cholesky(&s, None).unwrap();
        let g = cholesky(&s).unwrap();
        assert_eq!(f.rank, 5);
        assert_eq!(f.perm, (0..5).collect::<Vec<_>>());
        for i in 0..5 {
            assert_relative_eq!(f.row_scales[i], g.c[(i, i)], max_relative = 1e-12);
            for j in 0..=i {
                assert_relative_eq!(f.c[(i, j)] * f.row_scales[i], g.c[(i, j)], epsilon = 1e-12);
            }
        }
        assert!(singular_cholesky(&DMatrix::zeros(2, 2), None).is_err());
    }

    #[test]
    fn mahalanobis_examples() {
        let f = cholesky(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(mahalanobis_sq(&[3.0, 4.0], &[0.0, 0.0], &f).unwrap(), 25.0);
        assert_eq!(mahalanobis_sq(&[1.0, 2.0], &[1.0, 2.0], &f).unwrap(), 0.0);
        let f = cholesky(&DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 5.0])).unwrap();
        assert_relative_eq!(mahalanobis_sq(&[1.0, 1.0], &[0.0, 0.0], &f).unwrap(), 5.0 / 16.0, max_relative = 1e-14);
        let sing = singular_cholesky(&DMatrix::from_element(2, 2, 1.0), None).unwrap();
        assert!(matches!(mahalanobis_sq(&[1.0, 1.0], &[0.0, 0.0], &sing), Err(NvmixError::Singular { .. })));
    }

    #[test]
    fn log_det_matches_nalgebra() {
        let s = wishart(6, 3);
        let f = cholesky(&s).unwrap();
        assert_relative_eq!(f.log_det().unwrap(), s.determinant().ln(), max_relative = 1e-10);
    }

    proptest! {
        #[test]
        fn mahalanobis_permutation_invariant(seed in 0u64..1000, shift in 0usize..5) {
            let d = 5;
            let s = wishart(d, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
            let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let p: Vec<usize> = (0..d).map(|i| (i + shift) % d).collect();
            let sp = DMatrix::from_fn(d, d, |i, j| s[(p[i], p[j])]);
            let xp: Vec<f64> = p.iter().map(|&i| x[i]).collect();
            let zero = vec![0.0; d];
            let a = mahalanobis_sq(&x, &zero, &cholesky(&s).unwrap()).unwrap();
            let b = mahalanobis_sq(&xp, &zero, &cholesky(&sp).unwrap()).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
            let direct = DVector::from_vec(x.clone()).dot(&(s.clone().try_inverse().unwrap() * DVector::from_vec(x)));
            prop_assert!((a - direct).abs() <= 1e-8 * direct.max(1.0));
        }

        #[test]
        fn permutation_consistency(seed in 0u64..1000) {
            let s = wishart(4, seed);
            let f = cholesky(&s).unwrap();
            let sp = DMatrix::from_fn(4, 4, |i, j| s[(f.perm[i], f.perm[j])]);
            prop_assert_eq!(cholesky(&sp).unwrap().c, f.c);
        }
    }
}
