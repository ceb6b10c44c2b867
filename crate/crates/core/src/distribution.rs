//! `P(a < X <= b)` for normal variance mixtures by separation of variables,
//! greedy variable reordering and antithetic RQMC.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{NvmixError, Result};
use crate::linalg::{singular_cholesky, ScaleFactor};
use crate::mixtures::MixtureSpec;
use crate::model::NvmModel;
use crate::rqmc::{rqmc_estimate, RqmcConfig, RqmcResult};
use crate::special::{norm_cdf, norm_pdf, norm_quantile};

/// Clamp for arguments of the normal quantile.
const P_CLAMP: f64 = 1e-16;
/// Floor for squared conditional standard deviations during reordering.
const VAR_FLOOR: f64 = 1e-12;
/// Pilot size for the E(sqrt(W)) estimate used by the reordering.
pub const MEAN_SQRT_W_PILOT: usize = 1 << 10;

/// Limits and Cholesky factor after an (optional) reordering.
#[derive(Clone, Debug, PartialEq)]
pub struct ReorderedProblem {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Lower-triangular Cholesky factor of the permuted scale matrix.
    pub c: DMatrix<f64>,
    /// `perm[i]` is the original index of integration variable `i`.
    pub perm: Vec<usize>,
}

impl ReorderedProblem {
    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// Problem in the original variable order.
    pub fn identity(a: &[f64], b: &[f64], sigma: &DMatrix<f64>) -> Result<Self> {
        let f = crate::linalg::cholesky(sigma)?;
        Ok(Self { a: a.to_vec(), b: b.to_vec(), c: f.c, perm: (0..a.len()).collect() })
    }
}

// x / sqrt(w) with 0/0 read as 0 (W = 0 puts all mass at the origin).
#[inline]
fn scaled(x: f64, sw: f64) -> f64 {
    if sw > 0.0 {
        x / sw
    } else if x == 0.0 {
        0.0
    } else {
        x * f64::INFINITY
    }
}

// E(Z | s1 < Z < s2) for standard normal Z.
fn truncated_mean(s1: f64, s2: f64, p: f64) -> f64 {
    if p > 0.0 {
        return (norm_pdf(s1) - norm_pdf(s2)) / p;
    }
    match (s1.is_finite(), s2.is_finite()) {
        (true, true) => 0.5 * (s1 + s2),
        (true, false) => s1,
        (false, true) => s2,
        _ => 0.0,
    }
}

/// Greedy reordering: at each stage the variable with the smallest expected
/// conditional probability goes next, and the Cholesky factor is updated
/// alongside.
pub fn reorder(a: &[f64], b: &[f64], sigma: &DMatrix<f64>, mu_sqrt_w: f64) -> Result<ReorderedProblem> {
    let d = a.len();
    check_limits(a, b)?;
    if sigma.nrows() != d || sigma.ncols() != d {
        return Err(NvmixError::DimensionMismatch(format!("limits of length {d} for a {}x{} scale", sigma.nrows(), sigma.ncols())));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    let mut s = sigma.clone();
    let mut c = DMatrix::<f64>::zeros(d, d);
    let mut perm: Vec<usize> = (0..d).collect();
    let mut y = vec![0.0; d];
    let m = if mu_sqrt_w > 0.0 && mu_sqrt_w.is_finite() { mu_sqrt_w } else { 1.0 };
    for j in 0..d {
        // pick the next variable
        let mut best = j;
        let mut best_p = f64::INFINITY;
        for l in j..d {
            let mut shift = 0.0;
            let mut ss = 0.0;
            for k in 0..j {
                shift += c[(l, k)] * y[k];
                ss += c[(l, k)] * c[(l, k)];
            }
            let sd = (s[(l, l)] - ss).max(VAR_FLOOR).sqrt();
            let p = norm_cdf((b[l] / m - shift) / sd) - norm_cdf((a[l] / m - shift) / sd);
            if p < best_p {
                best_p = p;
                best = l;
            }
        }
        if best != j {
            a.swap(j, best);
            b.swap(j, best);
            perm.swap(j, best);
            s.swap_rows(j, best);
            s.swap_columns(j, best);
            c.swap_rows(j, best);
        }
        // Cholesky column j
        let mut ss = 0.0;
        for k in 0..j {
            ss += c[(j, k)] * c[(j, k)];
        }
        let cjj = (s[(j, j)] - ss).max(VAR_FLOOR).sqrt();
        c[(j, j)] = cjj;
        for l in j + 1..d {
            let mut t = s[(l, j)];
            for k in 0..j {
                t -= c[(j, k)] * c[(l, k)];
            }
            c[(l, j)] = t / cjj;
        }
        let mut shift = 0.0;
        for k in 0..j {
            shift += c[(j, k)] * y[k];
        }
        let ah = (a[j] / m - shift) / cjj;
        let bh = (b[j] / m - shift) / cjj;
        y[j] = truncated_mean(ah, bh, norm_cdf(bh) - norm_cdf(ah));
    }
    Ok(ReorderedProblem { a, b, c, perm })
}

fn check_limits(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(NvmixError::DimensionMismatch(format!("lower has {} entries, upper has {}", a.len(), b.len())));
    }
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x.is_nan() || y.is_nan() || x >= y {
            return Err(NvmixError::Domain(format!("need lower < upper, violated at index {i} ({x} >= {y})")));
        }
    }
    Ok(())
}

/// Separation-of-variables integrand: `u[0]` drives `W`, `u[1..d]` the
/// conditional normal variables.
pub fn integrand_g(u: &[f64], problem: &ReorderedProblem, mix: &MixtureSpec) -> f64 {
    let d = problem.dim();
    let w = mix.quantile_raw(u[0]);
    if !(w >= 0.0) {
        return f64::NAN;
    }
    let sw = w.sqrt();
    let c = &problem.c;
    let mut y = [0.0f64; 64];
    let mut y_heap;
    let y: &mut [f64] = if d <= 64 {
        &mut y[..d]
    } else {
        y_heap = vec![0.0; d];
        &mut y_heap
    };
    let mut prod = 1.0;
    for i in 0..d {
        let mut shift = 0.0;
        for j in 0..i {
            shift += c[(i, j)] * y[j];
        }
        let cii = c[(i, i)];
        let di = norm_cdf((scaled(problem.a[i], sw) - shift) / cii);
        let ei = norm_cdf((scaled(problem.b[i], sw) - shift) / cii);
        let gi = (ei - di).max(0.0);
        prod *= gi;
        if prod == 0.0 {
            return 0.0;
        }
        if i + 1 < d {
            y[i] = norm_quantile((di + u[i + 1] * gi).clamp(P_CLAMP, 1.0 - P_CLAMP));
        }
    }
    prod
}

/// Average of `g(u)` and `g(1 - u)`.
pub fn antithetic_g(u: &[f64], problem: &ReorderedProblem, mix: &MixtureSpec) -> f64 {
    let d = problem.dim();
    let mut v = [0.0f64; 64];
    let mut heap;
    let v: &mut [f64] = if d <= 64 {
        &mut v[..d]
    } else {
        heap = vec![0.0; d];
        &mut heap
    };
    for (vi, ui) in v.iter_mut().zip(u) {
        *vi = 1.0 - ui;
    }
    0.5 * (integrand_g(u, problem, mix) + integrand_g(v, problem, mix))
}

/// Options for `prob_with`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbOptions {
    pub reorder: bool,
    pub antithetic: bool,
}

impl Default for ProbOptions {
    fn default() -> Self {
        Self { reorder: true, antithetic: true }
    }
}

/// Shift the limits to a zero location.
fn centered_limits(a: &[f64], b: &[f64], loc: &DVector<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    check_limits(a, b)?;
    if a.len() != loc.len() {
        return Err(NvmixError::DimensionMismatch(format!("limits of length {} for dimension {}", a.len(), loc.len())));
    }
    Ok((
        a.iter().zip(loc.iter()).map(|(x, m)| x - m).collect(),
        b.iter().zip(loc.iter()).map(|(x, m)| x - m).collect(),
    ))
}

/// Reordered (or identity-ordered) problem for a full-rank model.
pub fn prepare(a: &[f64], b: &[f64], model: &NvmModel, reorder_vars: bool) -> Result<ReorderedProblem> {
    let (a, b) = centered_limits(a, b, &model.loc)?;
    if reorder_vars {
        reorder(&a, &b, &model.scale, model.mix.mean_sqrt_w(MEAN_SQRT_W_PILOT))
    } else {
        ReorderedProblem::identity(&a, &b, &model.scale)
    }
}

/// `P(a < X <= b)`.
pub fn prob(a: &[f64], b: &[f64], model: &NvmModel, cfg: &RqmcConfig, seed: u64) -> Result<RqmcResult> {
    prob_with(a, b, model, cfg, seed, ProbOptions::default())
}

/// `P(a < X <= b)` with explicit control over reordering and antithetic
/// pairing.
pub fn prob_with(
    a: &[f64],
    b: &[f64],
    model: &NvmModel,
    cfg: &RqmcConfig,
    seed: u64,
    opts: ProbOptions,
) -> Result<RqmcResult> {
    if !model.is_full_rank() {
        return prob_singular(a, b, model, cfg, seed);
    }
    let problem = prepare(a, b, model, opts.reorder)?;
    let d = problem.dim();
    let mix = &model.mix;
    let mut r = if opts.antithetic {
        rqmc_estimate(|u: &[f64]| antithetic_g(u, &problem, mix), d, cfg, seed)?
    } else {
        rqmc_estimate(|u: &[f64]| integrand_g(u, &problem, mix), d, cfg, seed)?
    };
    r.estimate = r.estimate.clamp(0.0, 1.0);
    Ok(r)
}

/// Limits rearranged to match a staircase factor: row `k` of the factor
/// gets `(a'_k, b'_k)`.
fn staircase_limits(a: &[f64], b: &[f64], f: &ScaleFactor) -> (Vec<f64>, Vec<f64>) {
    let n = f.c.nrows();
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    for k in 0..n {
        let i = f.perm[k];
        let s = f.row_scales[k];
        if f.negated[k] {
            lo.push(-b[i] / s);
            hi.push(-a[i] / s);
        } else {
            lo.push(a[i] / s);
            hi.push(b[i] / s);
        }
    }
    (lo, hi)
}

/// Integrand over `(0,1)^r` for a rank-`r` staircase factor.
fn singular_integrand(u: &[f64], lo: &[f64], hi: &[f64], f: &ScaleFactor, mix: &MixtureSpec) -> f64 {
    let r = f.rank;
    let w = mix.quantile_raw(u[0]);
    if !(w >= 0.0) {
        return f64::NAN;
    }
    let sw = w.sqrt();
    let mut y = vec![0.0; r];
    let mut prod = 1.0;
    for l in 0..r {
        let mut tl = f64::NEG_INFINITY;
        let mut th = f64::INFINITY;
        for k in f.block(l) {
            let mut shift = 0.0;
            for j in 0..l {
                shift += f.c[(k, j)] * y[j];
            }
            tl = tl.max(scaled(lo[k], sw) - shift);
            th = th.min(scaled(hi[k], sw) - shift);
        }
        if th <= tl {
            return 0.0;
        }
        let dl = norm_cdf(tl);
        let el = norm_cdf(th);
        let gl = (el - dl).max(0.0);
        prod *= gl;
        if prod == 0.0 {
            return 0.0;
        }
        if l + 1 < r {
            y[l] = norm_quantile((dl + u[l + 1] * gl).clamp(P_CLAMP, 1.0 - P_CLAMP));
        }
    }
    prod
}

/// `P(a < X <= b)` through the rank-revealing factor. Works for any
/// positive-semidefinite scale matrix.
pub fn prob_singular(a: &[f64], b: &[f64], model: &NvmModel, cfg: &RqmcConfig, seed: u64) -> Result<RqmcResult> {
    let (a, b) = centered_limits(a, b, &model.loc)?;
    let f = if model.factor.rank < model.dim() || !model.factor.zero_rows.is_empty() {
        model.factor.clone()
    } else {
        singular_cholesky(&model.scale, None)?
    };
    // coordinates with zero variance sit exactly at the location
    if f.zero_rows.iter().any(|&i| !(a[i] < 0.0 && 0.0 <= b[i])) {
        return Ok(RqmcResult::exact(0.0));
    }
    let (lo, hi) = staircase_limits(&a, &b, &f);
    let first = f.block(0);
    let max_lo = first.clone().map(|k| lo[k]).fold(f64::NEG_INFINITY, f64::max);
    let min_hi = first.map(|k| hi[k]).fold(f64::INFINITY, f64::min);
    if max_lo >= min_hi {
        return Ok(RqmcResult::exact(0.0));
    }
    let mix = &model.mix;
    let r = f.rank;
    let mut res = rqmc_estimate(
        |u: &[f64]| {
            let v: Vec<f64> = u.iter().map(|x| 1.0 - x).collect();
            0.5 * (singular_integrand(u, &lo, &hi, &f, mix) + singular_integrand(&v, &lo, &hi, &f, mix))
        },
        r,
        cfg,
        seed,
    )?;
    res.estimate = res.estimate.clamp(0.0, 1.0);
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn mix_const() -> MixtureSpec {
        MixtureSpec::constant(1.0).unwrap()
    }

    fn corr2(rho: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0])
    }

    const NINF: f64 = f64::NEG_INFINITY;

    #[test]
    fn reorder_picks_tightest_limit_first() {
        let p = reorder(&[NINF, NINF], &[5.0, 0.1], &DMatrix::identity(2, 2), 1.0).unwrap();
        assert_eq!(p.perm, vec![1, 0]);
        assert_eq!(p.b, vec![0.1, 5.0]);
        let p = reorder(&[NINF], &[0.3], &DMatrix::identity(1, 1), 1.0).unwrap();
        assert_eq!(p.perm, vec![0]);
    }

    #[test]
    fn reorder_factor_matches_permuted_scale() {
        let s = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.5, 0.3, 1.0, 0.2, 0.5, 0.2, 3.0]);
        let p = reorder(&[NINF, -1.0, NINF], &[1.0, 0.5, 2.0], &s, 1.3).unwrap();
        let sp = DMatrix::from_fn(3, 3, |i, j| s[(p.perm[i], p.perm[j])]);
        assert!((&p.c * p.c.transpose() - sp).abs().max() < 1e-12);
    }

    #[test]
    fn integrand_examples() {
        let p = ReorderedProblem::identity(&[NINF], &[0.0], &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(integrand_g(&[0.3], &p, &mix_const()), 0.5);
        let p = ReorderedProblem::identity(&[NINF, NINF], &[0.0, 0.0], &DMatrix::identity(2, 2)).unwrap();
        for u in [[0.1, 0.9], [0.5, 0.5], [0.7, 0.01]] {
            assert!((integrand_g(&u, &p, &mix_const()) - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn integrand_scalar_recursion() {
        // independent re-derivation for d = 2, rho = 0.5, W = 1
        let b = [0.3, -0.2];
        let p = ReorderedProblem::identity(&[NINF, NINF], &b, &corr2(0.5)).unwrap();
        let u1 = 0.37;
        let e1 = norm_cdf(b[0]);
        let z = norm_quantile(u1 * e1);
        let want = e1 * norm_cdf((b[1] - 0.5 * z) / 0.75f64.sqrt());
        let got = integrand_g(&[0.5, u1], &p, &mix_const());
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
    }

    #[test]
    fn orthant_probabilities() {
        let cfg = RqmcConfig::default();
        let m = NvmModel::standard(2, mix_const()).unwrap();
        let r = prob(&[NINF, NINF], &[0.0, 0.0], &m, &cfg, 1).unwrap();
        assert!((r.estimate - 0.25).abs() < 1e-3);
        for nu in [0.7, 3.0] {
            let m = NvmModel::centered(corr2(0.5), MixtureSpec::inverse_gamma(nu).unwrap()).unwrap();
            let r = prob(&[NINF, NINF], &[0.0, 0.0], &m, &cfg, 2).unwrap();
            let want = 0.25 + (0.5f64).asin() / (2.0 * PI);
            assert!((r.estimate - want).abs() < 1e-3, "nu={nu}: {r:?}");
        }
        let m = NvmModel::standard(1, MixtureSpec::inverse_gamma(2.0).unwrap()).unwrap();
        let r = prob(&[NINF], &[0.0], &m, &cfg, 3).unwrap();
        assert!((r.estimate - 0.5).abs() < 1e-3);
    }

    #[test]
    fn limit_errors() {
        let m = NvmModel::standard(2, mix_const()).unwrap();
        let cfg = RqmcConfig::default();
        assert!(matches!(prob(&[0.0, 0.0], &[0.0, 1.0], &m, &cfg, 1), Err(NvmixError::Domain(_))));
        assert!(prob(&[0.0], &[1.0], &m, &cfg, 1).is_err());
    }

    #[test]
    fn singular_collapses() {
        let cfg = RqmcConfig::default();
        let m = NvmModel::centered(DMatrix::from_element(2, 2, 1.0), mix_const()).unwrap();
        let r = prob(&[NINF, NINF], &[0.0, 0.0], &m, &cfg, 4).unwrap();
        assert!((r.estimate - 0.5).abs() < 1e-3);
        let r = prob(&[NINF, NINF], &[0.0, -1.0], &m, &cfg, 4).unwrap();
        assert!((r.estimate - norm_cdf(-1.0)).abs() < 1e-3);
        // disjoint constraints on the same variable
        let r = prob(&[0.5, NINF], &[1.0, 0.0], &m, &cfg, 4).unwrap();
        assert_eq!(r.estimate, 0.0);
        assert_eq!(r.error_estimate, 0.0);
    }

    #[test]
    fn forced_singular_path_matches_full_rank() {
        let cfg = RqmcConfig::default();
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.4, 0.2, 0.4, 1.0, 0.3, 0.2, 0.3, 1.0]);
        let m = NvmModel::centered(s, MixtureSpec::inverse_gamma(3.0).unwrap()).unwrap();
        let a = [-1.0, NINF, -0.5];
        let b = [1.0, 0.7, 2.0];
        let full = prob(&a, &b, &m, &cfg, 5).unwrap();
        let sing = prob_singular(&a, &b, &m, &cfg, 6).unwrap();
        assert!((full.estimate - sing.estimate).abs() < 2e-3, "{full:?} {sing:?}");
    }

    #[test]
    fn zero_variance_coordinate() {
        let cfg = RqmcConfig::default();
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let m = NvmModel::centered(s, mix_const()).unwrap();
        let r = prob(&[NINF, -1.0], &[0.0, 1.0], &m, &cfg, 7).unwrap();
        assert!((r.estimate - 0.5).abs() < 1e-3);
        let r = prob(&[NINF, 0.5], &[0.0, 1.0], &m, &cfg, 7).unwrap();
        assert_eq!(r.estimate, 0.0);
    }

    #[test]
    fn complement_in_one_dimension() {
        let cfg = RqmcConfig::default();
        let m = NvmModel::standard(1, MixtureSpec::pareto(1.5).unwrap()).unwrap();
        let lo = prob(&[NINF], &[0.8], &m, &cfg, 8).unwrap();
        let hi = prob(&[0.8], &[f64::INFINITY], &m, &cfg, 9).unwrap();
        assert!((lo.estimate + hi.estimate - 1.0).abs() < 2e-3);
    }

    #[test]
    fn permutation_invariance() {
        let cfg = RqmcConfig::default();
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.6, -0.2, 0.6, 2.0, 0.1, -0.2, 0.1, 0.5]);
        let a = [NINF, -1.0, -0.3];
        let b = [0.5, 1.5, f64::INFINITY];
        let mix = MixtureSpec::inverse_gamma(4.0).unwrap();
        let base = prob(&a, &b, &NvmModel::centered(s.clone(), mix.clone()).unwrap(), &cfg, 10).unwrap();
        let p = [2usize, 0, 1];
        let sp = DMatrix::from_fn(3, 3, |i, j| s[(p[i], p[j])]);
        let ap: Vec<f64> = p.iter().map(|&i| a[i]).collect();
        let bp: Vec<f64> = p.iter().map(|&i| b[i]).collect();
        let perm = prob(&ap, &bp, &NvmModel::centered(sp, mix).unwrap(), &cfg, 11).unwrap();
        assert!((base.estimate - perm.estimate).abs() < 2e-3);
    }
}
