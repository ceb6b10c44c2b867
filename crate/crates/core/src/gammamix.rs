//! The squared Mahalanobis distance `D² = W χ²_d`, univariate mixture
//! quantiles and joint quantile shortfall probabilities.

use serde::{Deserialize, Serialize};

use crate::density::{log_integral_batch, DensityOptions, LogKernel};
use crate::distribution::prob;
use crate::error::{NvmixError, Result};
use crate::mixtures::MixtureSpec;
use crate::model::NvmModel;
use crate::rqmc::{lse_slice, rqmc_estimate, PointSet, PointStream, RqmcConfig, RqmcResult};
use crate::special::{gamma_p, ln_gamma, norm_cdf, norm_quantile, LN_SQRT_2PI};

const LN_2: f64 = std::f64::consts::LN_2;

/// `P(D² <= x)`.
pub fn pgammamix(x: f64, d: usize, mix: &MixtureSpec, cfg: &RqmcConfig, seed: u64) -> Result<RqmcResult> {
    check_dim(d)?;
    if x.is_nan() {
        return Err(NvmixError::Domain("x is NaN".into()));
    }
    if x <= 0.0 {
        return Ok(RqmcResult::exact(0.0));
    }
    if x.is_infinite() {
        return Ok(RqmcResult::exact(1.0));
    }
    let a = 0.5 * d as f64;
    if mix.is_constant() {
        return Ok(RqmcResult::exact(gamma_p(a, x / (2.0 * mix.params()[0]))));
    }
    let mut r = rqmc_estimate(
        |u: &[f64]| {
            let w = mix.quantile_raw(u[0]);
            if !(w >= 0.0) {
                return f64::NAN;
            }
            gamma_p(a, x / (2.0 * w))
        },
        1,
        cfg,
        seed,
    )?;
    r.estimate = r.estimate.clamp(0.0, 1.0);
    Ok(r)
}

fn check_dim(d: usize) -> Result<()> {
    if d == 0 {
        return Err(NvmixError::Domain("dimension must be at least 1".into()));
    }
    Ok(())
}

/// Log-kernel whose integral over the mixing distribution is the density of
/// `D²` at `x`.
pub fn gammamix_kernel(x: f64, d: usize) -> LogKernel {
    let a = 0.5 * d as f64;
    LogKernel { log_c: (a - 1.0) * x.ln() - ln_gamma(a) - a * LN_2, k: a, d2: x }
}

/// Density of `D²` at `x` (log-density with `log = true`).
pub fn dgammamix(x: f64, d: usize, mix: &MixtureSpec, cfg: &RqmcConfig, seed: u64, log: bool) -> Result<RqmcResult> {
    let r = dgammamix_batch(&[x], d, mix, cfg, &DensityOptions::default(), seed)?.remove(0);
    Ok(if log { r } else { exp_result(r) })
}

/// Log-densities of `D²` at several points sharing one pilot run.
pub fn dgammamix_batch(
    xs: &[f64],
    d: usize,
    mix: &MixtureSpec,
    cfg: &RqmcConfig,
    opts: &DensityOptions,
    seed: u64,
) -> Result<Vec<RqmcResult>> {
    check_dim(d)?;
    let mut out: Vec<Option<RqmcResult>> = vec![None; xs.len()];
    let mut idx = Vec::new();
    let mut kernels = Vec::new();
    for (i, &x) in xs.iter().enumerate() {
        if x.is_nan() || x < 0.0 {
            return Err(NvmixError::Domain(format!("density of D² needs x >= 0, got {x}")));
        }
        if x == 0.0 {
            if d == 1 {
                // chi-square with one degree of freedom has a pole at 0
                out[i] = Some(RqmcResult::exact(f64::INFINITY));
                continue;
            }
            return Err(NvmixError::Domain("density of D² at 0 requires d = 1".into()));
        }
        idx.push(i);
        kernels.push(gammamix_kernel(x, d));
    }
    let res = log_integral_batch(&kernels, mix, cfg, opts, seed)?;
    for (i, r) in idx.into_iter().zip(res) {
        out[i] = Some(r);
    }
    Ok(out.into_iter().map(|r| r.unwrap()).collect())
}

fn exp_result(mut r: RqmcResult) -> RqmcResult {
    let v = r.estimate.exp();
    r.error_estimate = if r.error_estimate.is_finite() { v * r.error_estimate.exp_m1() } else { f64::INFINITY };
    r.estimate = v;
    r
}

/// Controls for the Newton quantile solvers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileOptions {
    /// Stop once `|F(q) - u|` is at most this.
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Stored mixing realizations behind `F` and `f`.
    pub n_realizations: usize,
}

impl Default for QuantileOptions {
    fn default() -> Self {
        Self { newton_tol: 1e-4, max_newton: 100, n_realizations: 1 << 13 }
    }
}

/// Mixing realizations from a shifted Sobol' stream, shared by every
/// distribution-function and density evaluation of one quantile batch.
fn realizations(mix: &MixtureSpec, n: usize, seed: u64) -> Result<Vec<f64>> {
    if mix.is_constant() {
        return Ok(vec![mix.params()[0]]);
    }
    let mut s = PointStream::new(PointSet::Sobol, 1, seed)?;
    let mut out = Vec::with_capacity(n);
    let mut p = [0.0];
    for _ in 0..n.max(1) {
        s.next_into(&mut p);
        let w = mix.quantile_raw(p[0]);
        if !(w >= 0.0) {
            return Err(NvmixError::InvalidMixture { u: p[0], value: w });
        }
        out.push(w);
    }
    Ok(out)
}

/// Newton iteration in the log-step form with a bisection fallback.
fn newton<F, L>(u: f64, q0: f64, lower: f64, cdf: F, mut log_pdf: L, opts: &QuantileOptions) -> Result<f64>
where
    F: Fn(f64) -> f64,
    L: FnMut(f64) -> f64,
{
    let mut lo = lower;
    let mut hi = f64::INFINITY;
    let mut q = q0;
    for _ in 0..opts.max_newton {
        let diff = cdf(q) - u;
        if diff.abs() <= opts.newton_tol {
            return Ok(q);
        }
        if diff < 0.0 {
            lo = q;
        } else {
            hi = q;
        }
        let step = diff.signum() * (diff.abs().ln() - log_pdf(q)).exp();
        let mut next = q - step;
        if !(next > lo && next < hi) {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * q.abs().max(1.0) };
        }
        q = next;
    }
    Err(NvmixError::NoConvergence(format!(
        "quantile at level {u} did not converge; last bracket [{lo}, {hi}]"
    )))
}

fn check_levels(us: &[f64]) -> Result<()> {
    for &u in us {
        if !(u > 0.0 && u < 1.0) {
            return Err(NvmixError::Domain(format!("quantile level {u} outside (0,1)")));
        }
    }
    Ok(())
}

// Process levels in increasing order, warm-starting from the previous root.
fn sorted_solve<S>(us: &[f64], mut solve: S) -> Result<Vec<f64>>
where
    S: FnMut(f64, Option<f64>) -> Result<f64>,
{
    let mut order: Vec<usize> = (0..us.len()).collect();
    order.sort_by(|&a, &b| us[a].total_cmp(&us[b]));
    let mut out = vec![0.0; us.len()];
    let mut prev = None;
    for i in order {
        let q = solve(us[i], prev)?;
        out[i] = q;
        prev = Some(q);
    }
    Ok(out)
}

/// Quantiles of `D²` at several levels.
pub fn qgammamix_batch(us: &[f64], d: usize, mix: &MixtureSpec, opts: &QuantileOptions, seed: u64) -> Result<Vec<f64>> {
    check_dim(d)?;
    check_levels(us)?;
    let ws = realizations(mix, opts.n_realizations, seed)?;
    let a = 0.5 * d as f64;
    let ln_n = (ws.len() as f64).ln();
    let lg = ln_gamma(a);
    let cdf = |q: f64| ws.iter().map(|&w| gamma_p(a, q / (2.0 * w))).sum::<f64>() / ws.len() as f64;
    let mut terms = vec![0.0; ws.len()];
    let mut log_pdf = |q: f64| {
        for (t, &w) in terms.iter_mut().zip(&ws) {
            *t = (a - 1.0) * q.ln() - lg - a * (2.0 * w).ln() - q / (2.0 * w);
        }
        lse_slice(&terms) - ln_n
    };
    let mut sorted = ws.clone();
    sorted.sort_by(f64::total_cmp);
    let w_med = sorted[sorted.len() / 2];
    sorted_solve(us, |u, prev| {
        let q0 = prev.unwrap_or(d as f64 * w_med);
        newton(u, q0, 0.0, cdf, &mut log_pdf, opts)
    })
}

/// Quantile of `D²` at level `u`.
pub fn qgammamix(u: f64, d: usize, mix: &MixtureSpec, opts: &QuantileOptions, seed: u64) -> Result<f64> {
    Ok(qgammamix_batch(&[u], d, mix, opts, seed)?[0])
}

/// Quantiles of the standardized univariate mixture `sqrt(W) Z`.
pub fn qnvmix_batch(us: &[f64], mix: &MixtureSpec, opts: &QuantileOptions, seed: u64) -> Result<Vec<f64>> {
    check_levels(us)?;
    let ws: Vec<f64> = realizations(mix, opts.n_realizations, seed)?;
    let sw: Vec<f64> = ws.iter().map(|w| w.sqrt()).collect();
    let ln_n = (sw.len() as f64).ln();
    let cdf = |q: f64| {
        sw.iter().map(|&s| if s > 0.0 { norm_cdf(q / s) } else if q >= 0.0 { 1.0 } else { 0.0 }).sum::<f64>()
            / sw.len() as f64
    };
    let mut terms = vec![0.0; sw.len()];
    let mut log_pdf = |q: f64| {
        for (t, &s) in terms.iter_mut().zip(&sw) {
            let z = q / s;
            *t = -0.5 * z * z - LN_SQRT_2PI - s.ln();
        }
        lse_slice(&terms) - ln_n
    };
    let mut sorted = sw.clone();
    sorted.sort_by(f64::total_cmp);
    let s_med = sorted[sorted.len() / 2];
    // solve on the upper half and reflect, so the result is exactly symmetric
    let upper: Vec<f64> = us.iter().map(|&u| if u < 0.5 { 1.0 - u } else { u }).collect();
    let q = sorted_solve(&upper, |u, prev| {
        if u == 0.5 {
            return Ok(0.0);
        }
        let q0 = prev.filter(|&p| p > 0.0).unwrap_or(norm_quantile(u) * s_med);
        newton(u, q0, 0.0, cdf, &mut log_pdf, opts)
    })?;
    Ok(q.into_iter().zip(us).map(|(q, &u)| if u < 0.5 { -q } else { q }).collect())
}

/// Quantile of the standardized univariate mixture at level `u`.
pub fn qnvmix(u: f64, mix: &MixtureSpec, opts: &QuantileOptions, seed: u64) -> Result<f64> {
    Ok(qnvmix_batch(&[u], mix, opts, seed)?[0])
}

/// `P(X_1 <= q_1(u), ..., X_d <= q_d(u))` with `q_i` the marginal
/// `u`-quantiles.
pub fn shortfall_prob(u: f64, model: &NvmModel, cfg: &RqmcConfig, opts: &QuantileOptions, seed: u64) -> Result<RqmcResult> {
    if !model.is_full_rank() {
        return Err(NvmixError::Singular { rank: model.factor.rank, dim: model.dim() });
    }
    let z = qnvmix(u, &model.mix, opts, seed)?;
    let d = model.dim();
    let upper: Vec<f64> = (0..d).map(|i| model.loc[i] + model.scale[(i, i)].sqrt() * z).collect();
    prob(&vec![f64::NEG_INFINITY; d], &upper, model, cfg, seed.wrapping_add(1))
}
