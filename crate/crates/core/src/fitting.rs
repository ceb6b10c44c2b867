//! ECME estimation of `(ν, μ, Σ)` for a normal variance mixture.
//!
//! The location and scale are updated by weighted moment steps with weights
//! `δ_i = E(1/W | X_i)`. The mixing parameters are updated by maximizing
//! the observed log-likelihood directly. Inverse-gamma, Pareto and constant
//! mixtures have closed forms for both ingredients. Every other mixture uses
//! the adaptive RQMC integrals from [`crate::density`].

use argmin::core::{CostFunction, Error as ArgminError, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::density::{closed_log_density_d2, derive_seed, log_integral_batch, DensityOptions, LogKernel};
use crate::error::{NvmixError, Result};
use crate::linalg::{cholesky, mahalanobis_rows};
use crate::mixtures::{Family, MixtureSpec};
use crate::rqmc::RqmcConfig;
use crate::special::ln_gamma_p;
use crate::stats::{column_means, sample_covariance, CubicSpline};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const REL_FLOOR: f64 = 1e-10;
/// Log-parameters are kept inside `[-LOG_BOUND, LOG_BOUND]`.
const LOG_BOUND: f64 = 12.0;
const PENALTY: f64 = 1e300;
/// Spread of simplex values (log-likelihood units) that stops a search.
const SD_TOL_START: f64 = 1e-2;
const SD_TOL_NU: f64 = 1e-4;

/// How weights and log-likelihoods are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Evaluation {
    /// Closed forms where available, RQMC otherwise.
    #[default]
    Auto,
    /// Always estimate by RQMC.
    Estimated,
}

/// Settings for RQMC-estimated weights and densities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimation {
    pub mode: Evaluation,
    pub rqmc: RqmcConfig,
    pub density: DensityOptions,
    /// Reuse weights from earlier inner iterations by interpolation in `D²`.
    pub interpolate_weights: bool,
    /// Estimate the log-likelihood at this many knots, equally spaced in
    /// `log(1 + D²)`, and spline-interpolate the rest. `None` estimates
    /// every point.
    pub likelihood_knots: Option<usize>,
}

impl Default for Estimation {
    fn default() -> Self {
        Self { mode: Evaluation::Auto, rqmc: RqmcConfig::default(), density: DensityOptions::default(), interpolate_weights: true, likelihood_knots: Some(64) }
    }
}

impl Estimation {
    fn analytic(&self, mix: &MixtureSpec) -> bool {
        self.mode == Evaluation::Auto
            && matches!(mix.family(), Family::InverseGamma | Family::Pareto | Family::Constant)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub eps_mu: f64,
    pub eps_sigma: f64,
    pub eps_nu: f64,
    pub max_ecme_iter: usize,
    pub max_inner_iter: usize,
    /// Simplex iterations per likelihood maximization.
    pub max_optim_iter: u64,
    /// Rows used for the starting values; `None` uses all.
    pub subsample: Option<usize>,
    pub estimation: Estimation,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            eps_mu: 1e-2,
            eps_sigma: 1e-2,
            eps_nu: 1e-2,
            max_ecme_iter: 30,
            max_inner_iter: 50,
            max_optim_iter: 200,
            subsample: None,
            estimation: Estimation::default(),
        }
    }
}

impl FitConfig {
    /// Same tolerance for `μ`, `Σ` and `ν`.
    pub fn with_tol(mut self, eps: f64) -> Self {
        self.eps_mu = eps;
        self.eps_sigma = eps;
        self.eps_nu = eps;
        self
    }

    pub fn with_evaluation(mut self, mode: Evaluation) -> Self {
        self.estimation.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eps_mu", self.eps_mu), ("eps_sigma", self.eps_sigma), ("eps_nu", self.eps_nu)] {
            if !(v > 0.0) {
                return Err(NvmixError::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_ecme_iter == 0 || self.max_inner_iter == 0 {
            return Err(NvmixError::Domain("iteration limits must be positive".into()));
        }
        self.estimation.rqmc.validate()
    }
}

/// One ECME iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub nu: Vec<f64>,
    /// Log-likelihood after the location/scale step, before the `ν` step.
    pub loglik_before: f64,
    /// Log-likelihood after the `ν` step.
    pub loglik: f64,
    /// Error estimate of `loglik` (0 for closed forms).
    pub loglik_error: f64,
    pub inner_iterations: usize,
    pub inner_converged: bool,
    pub nu_update_failed: bool,
    pub rel_diff_mu: f64,
    pub rel_diff_sigma: f64,
    pub rel_diff_nu: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub nu: Vec<f64>,
    pub loc: DVector<f64>,
    pub scale: DMatrix<f64>,
    pub loglik: f64,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    /// Starting values came from the fallback defaults.
    pub default_start: bool,
}

/// Largest relative change `|old - new| / max(|old|, 1e-10)`.
pub fn rel_diff(old: &[f64], new: &[f64]) -> f64 {
    assert_eq!(old.len(), new.len(), "rel_diff on vectors of different length");
    old.iter().zip(new).map(|(o, n)| (o - n).abs() / o.abs().max(REL_FLOOR)).fold(0.0, f64::max)
}

/// `E(1/W | D²)` for an inverse-gamma mixture.
pub fn weight_inverse_gamma(d2: f64, d: usize, nu: f64) -> f64 {
    (nu + d as f64) / (nu + d2)
}

/// `E(1/W | D²)` for a Pareto mixture.
pub fn weight_pareto(d2: f64, d: usize, alpha: f64) -> f64 {
    let a = alpha + 0.5 * d as f64;
    if d2 < 1e-12 {
        return a / (a + 1.0);
    }
    let x = 0.5 * d2;
    (ln_gamma_p(a + 1.0, x) - ln_gamma_p(a, x)).exp() * a / x
}

fn check_d2(d2: &[f64]) -> Result<()> {
    match d2.iter().find(|v| !v.is_finite() || **v < 0.0) {
        Some(v) => Err(NvmixError::Domain(format!("squared Mahalanobis distance {v} is not finite"))),
        None => Ok(()),
    }
}

/// Weights `δ_i = E(1/W | D²_i)` from squared Mahalanobis distances.
pub fn weights_d2(d2: &[f64], d: usize, mix: &MixtureSpec, est: &Estimation, seed: u64) -> Result<Vec<f64>> {
    check_d2(d2)?;
    if est.analytic(mix) {
        let p = mix.params();
        return Ok(match mix.family() {
            Family::InverseGamma => d2.iter().map(|&m| weight_inverse_gamma(m, d, p[0])).collect(),
            Family::Pareto => d2.iter().map(|&m| weight_pareto(m, d, p[0])).collect(),
            _ => vec![1.0 / p[0]; d2.len()],
        });
    }
    let k = 0.5 * d as f64;
    let kernels: Vec<LogKernel> = d2
        .iter()
        .map(|&m| LogKernel { log_c: 0.0, k: k + 1.0, d2: m })
        .chain(d2.iter().map(|&m| LogKernel { log_c: 0.0, k, d2: m }))
        .collect();
    let est_ = log_integral_batch(&kernels, mix, &est.rqmc, &est.density, seed)?;
    let (num, den) = est_.split_at(d2.len());
    Ok(num.iter().zip(den).map(|(a, b)| (a.estimate - b.estimate).exp()).collect())
}

/// Weights for the rows of `x` under location `loc` and scale `scale`.
pub fn weights(
    x: &DMatrix<f64>,
    loc: &DVector<f64>,
    scale: &DMatrix<f64>,
    mix: &MixtureSpec,
    est: &Estimation,
    seed: u64,
) -> Result<Vec<f64>> {
    let factor = cholesky(scale)?;
    let d2 = mahalanobis_rows(x, loc, &factor)?;
    weights_d2(&d2, x.ncols(), mix, est, seed)
}

/// Stored `(D², δ)` pairs, sorted in `D²` and made non-increasing.
#[derive(Clone, Debug, Default)]
pub struct WeightTable {
    d2: Vec<f64>,
    delta: Vec<f64>,
}

impl WeightTable {
    pub fn is_empty(&self) -> bool {
        self.d2.is_empty()
    }

    pub fn insert(&mut self, d2: &[f64], delta: &[f64]) {
        let mut pairs: Vec<(f64, f64)> = self.d2.iter().copied().zip(self.delta.iter().copied()).collect();
        pairs.extend(d2.iter().copied().zip(delta.iter().copied()));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.dedup_by(|a, b| a.0 == b.0);
        let mut run = f64::INFINITY;
        self.d2.clear();
        self.delta.clear();
        for (m, w) in pairs {
            run = run.min(w);
            self.d2.push(m);
            self.delta.push(run);
        }
    }

    /// Linear interpolation inside the range of stored distances.
    pub fn lookup(&self, d2: f64) -> Option<f64> {
        let (lo, hi) = (*self.d2.first()?, *self.d2.last()?);
        if d2 < lo || d2 > hi {
            return None;
        }
        let j = self.d2.partition_point(|&m| m < d2);
        if self.d2[j] == d2 {
            return Some(self.delta[j]);
        }
        let (x0, x1, y0, y1) = (self.d2[j - 1], self.d2[j], self.delta[j - 1], self.delta[j]);
        Some(y0 + (y1 - y0) * (d2 - x0) / (x1 - x0))
    }
}

/// Weights that reuse `table` where possible and store fresh estimates.
fn weights_cached(
    d2: &[f64],
    d: usize,
    mix: &MixtureSpec,
    est: &Estimation,
    table: &mut WeightTable,
    seed: u64,
) -> Result<Vec<f64>> {
    if est.analytic(mix) || !est.interpolate_weights {
        return weights_d2(d2, d, mix, est, seed);
    }
    let mut out: Vec<Option<f64>> = d2.iter().map(|&m| table.lookup(m)).collect();
    let missing: Vec<usize> = (0..d2.len()).filter(|&i| out[i].is_none()).collect();
    if !missing.is_empty() {
        let m2: Vec<f64> = missing.iter().map(|&i| d2[i]).collect();
        let fresh = weights_d2(&m2, d, mix, est, seed)?;
        for (&i, &w) in missing.iter().zip(&fresh) {
            out[i] = Some(w);
        }
        table.insert(&m2, &fresh);
    }
    Ok(out.into_iter().map(|w| w.unwrap_or(f64::NAN)).collect())
}

/// One location/scale step. The scale uses the current location `mu`.
pub fn update_mu_sigma(x: &DMatrix<f64>, delta: &[f64], mu: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, d) = x.shape();
    if delta.len() != n {
        return Err(NvmixError::DimensionMismatch(format!("{} weights for {n} rows", delta.len())));
    }
    if mu.len() != d {
        return Err(NvmixError::DimensionMismatch(format!("location of length {} for {d} columns", mu.len())));
    }
    if delta.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(NvmixError::Domain("weights must be finite and non-negative".into()));
    }
    let total: f64 = delta.iter().sum();
    if total <= 0.0 {
        return Err(NvmixError::Domain("all weights are zero".into()));
    }
    let mut mu_next = DVector::zeros(d);
    let mut sigma = DMatrix::zeros(d, d);
    let mut r = DVector::zeros(d);
    for (i, &w) in delta.iter().enumerate() {
        let row = x.row(i).transpose();
        mu_next.axpy(w, &row, 1.0);
        r.copy_from(&row);
        r -= mu;
        sigma.ger(w, &r, &r, 1.0);
    }
    mu_next /= total;
    sigma /= n as f64;
    Ok((mu_next, sigma))
}

/// Log-likelihood `Σ log f(x_i)` from squared distances, with its error
/// estimate (root sum of squared per-point errors).
pub fn log_likelihood_d2(
    d2: &[f64],
    d: usize,
    log_det: f64,
    mix: &MixtureSpec,
    est: &Estimation,
    seed: u64,
) -> Result<(f64, f64)> {
    check_d2(d2)?;
    if est.analytic(mix) {
        let mut s = 0.0;
        for &m in d2 {
            s += closed_log_density_d2(m, d, log_det, mix)?;
        }
        return Ok((s, 0.0));
    }
    let log_c = -0.5 * d as f64 * LN_2PI - 0.5 * log_det;
    let k = 0.5 * d as f64;
    let n = d2.len() as f64;
    match est.likelihood_knots {
        Some(m) if m >= 4 && (m as f64) < n => {
            let s: Vec<f64> = d2.iter().map(|v| v.ln_1p()).collect();
            let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo < 1e-12 {
                let r = &log_integral_batch(&[LogKernel { log_c, k, d2: d2[0] }], mix, &est.rqmc, &est.density, seed)?[0];
                return Ok((n * r.estimate, n * r.error_estimate));
            }
            let h = (hi - lo) / (m - 1) as f64;
            let knots: Vec<f64> = (0..m).map(|j| lo + h * j as f64).collect();
            let kernels: Vec<LogKernel> = knots.iter().map(|&t| LogKernel { log_c, k, d2: t.exp_m1() }).collect();
            let res = log_integral_batch(&kernels, mix, &est.rqmc, &est.density, seed)?;
            let spline = CubicSpline::new(knots, res.iter().map(|r| r.estimate).collect());
            // Knot errors are shared by all points near the knot.
            let mut count = vec![0.0; m];
            let mut value = 0.0;
            for &t in &s {
                value += spline.eval(t);
                count[(((t - lo) / h).round() as usize).min(m - 1)] += 1.0;
            }
            let err = res.iter().zip(&count).map(|(r, c)| (c * r.error_estimate).powi(2)).sum::<f64>().sqrt();
            Ok((value, err))
        }
        _ => {
            let kernels: Vec<LogKernel> = d2.iter().map(|&m| LogKernel { log_c, k, d2: m }).collect();
            let res = log_integral_batch(&kernels, mix, &est.rqmc, &est.density, seed)?;
            let value = res.iter().map(|r| r.estimate).sum();
            let err = res.iter().map(|r| r.error_estimate * r.error_estimate).sum::<f64>().sqrt();
            Ok((value, err))
        }
    }
}

/// Log-likelihood of the rows of `x`.
pub fn log_likelihood(
    x: &DMatrix<f64>,
    loc: &DVector<f64>,
    scale: &DMatrix<f64>,
    mix: &MixtureSpec,
    est: &Estimation,
    seed: u64,
) -> Result<(f64, f64)> {
    let factor = cholesky(scale)?;
    let d2 = mahalanobis_rows(x, loc, &factor)?;
    log_likelihood_d2(&d2, x.ncols(), factor.log_det()?, mix, est, seed)
}

/// Fallback mixing parameters when the starting-value search fails.
pub fn default_start(mix: &MixtureSpec) -> Vec<f64> {
    match mix.family() {
        Family::InverseGamma => vec![5.0],
        Family::Pareto => vec![2.0],
        Family::InverseBurr => vec![2.0, 2.0],
        Family::Constant => mix.params().to_vec(),
        Family::Blackbox { .. } => vec![1.0; mix.params().len()],
    }
}

/// Number of mixing parameters that are estimated. A constant mixture is
/// not identifiable next to `Σ` and stays fixed.
fn free_params(mix: &MixtureSpec) -> usize {
    if matches!(mix.family(), Family::Constant) {
        0
    } else {
        mix.params().len()
    }
}

/// Negative log-likelihood over log-parameters for the simplex search.
struct Objective<'a> {
    d2: &'a [f64],
    d: usize,
    log_det: f64,
    mix: &'a MixtureSpec,
    est: &'a Estimation,
    seed: u64,
    /// Also optimize a multiplier `c` of `Σ` (last coordinate).
    with_scale: bool,
}

impl Objective<'_> {
    fn eval(&self, p: &[f64]) -> Result<f64> {
        if p.iter().any(|v| !v.is_finite() || v.abs() > LOG_BOUND) {
            return Ok(PENALTY);
        }
        let n_mix = free_params(self.mix);
        let mix = if n_mix > 0 {
            let params: Vec<f64> = p[..n_mix].iter().map(|v| v.exp()).collect();
            match self.mix.with_params(&params) {
                Ok(m) => m,
                Err(_) => return Ok(PENALTY),
            }
        } else {
            self.mix.clone()
        };
        let (d2, log_det) = if self.with_scale {
            let ln_c = p[n_mix];
            let c = ln_c.exp();
            (self.d2.iter().map(|m| m / c).collect::<Vec<_>>(), self.log_det + self.d as f64 * ln_c)
        } else {
            (self.d2.to_vec(), self.log_det)
        };
        let (ll, _) = log_likelihood_d2(&d2, self.d, log_det, &mix, self.est, self.seed)?;
        Ok(if ll.is_finite() { -ll } else { PENALTY })
    }
}

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, ArgminError> {
        self.eval(p).map_err(|e| ArgminError::msg(e.to_string()))
    }
}

/// Minimize the objective from `start` (log-parameters). Returns the best
/// point and its value, or `None` when the search fails.
fn simplex(obj: Objective<'_>, start: Vec<f64>, max_iter: u64, sd_tol: f64) -> Option<(Vec<f64>, f64)> {
    let f0 = obj.eval(&start).ok()?;
    let mut vertices = vec![start.clone()];
    for j in 0..start.len() {
        let mut v = start.clone();
        v[j] += 0.25;
        vertices.push(v);
    }
    let solver = NelderMead::new(vertices).with_sd_tolerance(sd_tol).ok()?;
    let res = Executor::new(obj, solver).configure(|s| s.max_iters(max_iter)).run().ok()?;
    let state = res.state();
    let best = state.get_best_param()?.clone();
    let cost = state.get_best_cost();
    if !cost.is_finite() || cost >= PENALTY {
        return None;
    }
    // The start is kept if the search did not improve on it.
    Some(if cost <= f0 { (best, cost) } else { (start, f0) })
}

/// Starting values: the sample mean, and `(ν, c)` maximizing the
/// likelihood with `Σ = c S` for the sample covariance `S`. The flag is set
/// when the search failed and defaults were used.
pub fn initial_estimate(
    x: &DMatrix<f64>,
    mix: &MixtureSpec,
    cfg: &FitConfig,
    seed: u64,
) -> Result<StartValues> {
    let (n, d) = x.shape();
    if n <= d {
        return Err(NvmixError::InvalidInput(format!("need more rows than columns, got {n}x{d}")));
    }
    let mu = column_means(x);
    let s = sample_covariance(x);
    let factor = cholesky(&s)?;
    let rows = cfg.subsample.map_or(n, |m| m.clamp(d + 1, n));
    let sub = x.rows(0, rows).into_owned();
    let d2 = mahalanobis_rows(&sub, &mu, &factor)?;
    let log_det = factor.log_det()?;
    let n_mix = free_params(mix);
    let mut start: Vec<f64> = mix.params()[..n_mix].iter().map(|v| v.ln()).collect();
    start.push(0.0);
    let obj = Objective { d2: &d2, d, log_det, mix, est: &cfg.estimation, seed, with_scale: true };
    match simplex(obj, start, cfg.max_optim_iter, SD_TOL_START) {
        Some((p, _)) => {
            let nu: Vec<f64> = if n_mix > 0 { p[..n_mix].iter().map(|v| v.exp()).collect() } else { mix.params().to_vec() };
            Ok((nu, mu, s * p[n_mix].exp(), false))
        }
        None => Ok((default_start(mix), mu, s, true)),
    }
}

/// Mixing parameters, location, scale and whether defaults were used.
pub type StartValues = (Vec<f64>, DVector<f64>, DMatrix<f64>, bool);

/// ECME fit of the mixing parameters, location and scale.
pub fn fit(x: &DMatrix<f64>, mix: &MixtureSpec, cfg: &FitConfig, seed: u64) -> Result<FitResult> {
    cfg.validate()?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(NvmixError::InvalidInput("data contain non-finite values".into()));
    }
    let d = x.ncols();
    let est = &cfg.estimation;
    let (mut nu, mut mu, mut sigma, default_start) = initial_estimate(x, mix, cfg, derive_seed(seed, 0))?;
    let mut cur = mix.with_params(&nu)?;
    let n_mix = free_params(mix);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut loglik = f64::NAN;

    for k in 1..=cfg.max_ecme_iter {
        let iter_seed = derive_seed(seed, k as u64);
        // Location/scale steps at fixed ν.
        let mut table = WeightTable::default();
        let mut inner_converged = false;
        let mut inner = 0;
        let (mut dm, mut ds) = (f64::NAN, f64::NAN);
        while inner < cfg.max_inner_iter {
            inner += 1;
            let factor = cholesky(&sigma)?;
            let d2 = mahalanobis_rows(x, &mu, &factor)?;
            let delta = weights_cached(&d2, d, &cur, est, &mut table, derive_seed(iter_seed, inner as u64))?;
            let (mu_next, sigma_next) = update_mu_sigma(x, &delta, &mu)?;
            dm = rel_diff(mu.as_slice(), mu_next.as_slice());
            ds = rel_diff(sigma.as_slice(), sigma_next.as_slice());
            mu = mu_next;
            sigma = sigma_next;
            if dm < cfg.eps_mu && ds < cfg.eps_sigma {
                inner_converged = true;
                break;
            }
        }

        // ν step with a fixed seed so the objective is deterministic.
        let factor = cholesky(&sigma)?;
        let d2 = mahalanobis_rows(x, &mu, &factor)?;
        let log_det = factor.log_det()?;
        let ll_seed = derive_seed(iter_seed, u64::MAX);
        let (ll_before, err_before) = log_likelihood_d2(&d2, d, log_det, &cur, est, ll_seed)?;
        let mut nu_failed = false;
        let mut nu_next = nu.clone();
        let mut err = err_before;
        loglik = ll_before;
        if n_mix > 0 {
            let start: Vec<f64> = nu.iter().map(|v| v.ln()).collect();
            let obj = Objective { d2: &d2, d, log_det, mix, est, seed: ll_seed, with_scale: false };
            match simplex(obj, start, cfg.max_optim_iter, SD_TOL_NU) {
                Some((p, cost)) => {
                    nu_next = p.iter().map(|v| v.exp()).collect();
                    cur = mix.with_params(&nu_next)?;
                    if -cost != ll_before {
                        let (ll, e) = log_likelihood_d2(&d2, d, log_det, &cur, est, ll_seed)?;
                        loglik = ll;
                        err = e;
                    }
                }
                None => nu_failed = true,
            }
        }
        let dn = if n_mix > 0 { rel_diff(&nu, &nu_next) } else { 0.0 };
        nu = nu_next;
        trace.push(TraceEntry {
            iteration: k,
            nu: nu.clone(),
            loglik_before: ll_before,
            loglik,
            loglik_error: err.max(err_before),
            inner_iterations: inner,
            inner_converged,
            nu_update_failed: nu_failed,
            rel_diff_mu: dm,
            rel_diff_sigma: ds,
            rel_diff_nu: dn,
        });
        if dn < cfg.eps_nu {
            converged = true;
            break;
        }
    }
    Ok(FitResult { nu, loc: mu, scale: sigma, loglik, trace, converged, default_start })
}
